"""Mixed finite element / theta-scheme solver for the 1D damped wave system."""
