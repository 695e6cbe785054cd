"""Exact rational exponents shared by the weighted norms and weights."""

from fractions import Fraction

#: power of the cone distance (1 + ||x| - c t|) in the bracket norm [v]_k
BRACKET_CONE_EXP = Fraction(15, 16)
#: power of (1 + |x|) in both bracket norms
BRACKET_RADIAL_EXP = Fraction(1, 2)
#: power of the cone distance in the double bracket norm [[v]]_k
DBL_BRACKET_CONE_EXP = Fraction(1, 1)
#: power of (1 + |x| + t) in the angle norm <v>_k
ANGLE_EXP = Fraction(7, 16)
#: power of (1 + |x| + t) in the double angle norm <<v>>_k
DBL_ANGLE_EXP = Fraction(1, 2)

#: polynomial degree of each null form in X
FORM_DEGREE = {"Phi": 3, "Psi": 2, "Theta": 4, "Xi": 3}

#: highest Gamma order supported by the discrete norms
MAX_NORM_ORDER = 2
