// Compiles every public header in one translation unit with strict warnings.
#include "momentum_lab.hpp"
