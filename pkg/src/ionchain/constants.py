"""Physical constants (CODATA 2018), SI units."""

# elementary charge, C
E_CHARGE = 1.602176634e-19

# vacuum permittivity, F/m
EPSILON_0 = 8.8541878128e-12

# reduced Planck constant, J s
HBAR = 1.054571817e-34

# atomic mass unit, kg
AMU = 1.66053906660e-27
