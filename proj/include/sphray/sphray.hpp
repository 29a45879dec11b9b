#pragma once

#include "sphray/approx.hpp"
#include "sphray/errors.hpp"
#include "sphray/int_ops.hpp"
#include "sphray/io.hpp"
#include "sphray/kernel.hpp"
#include "sphray/lut.hpp"
#include "sphray/parallel.hpp"
#include "sphray/piecewise.hpp"
#include "sphray/polynomial.hpp"
#include "sphray/quadrature.hpp"
#include "sphray/quantize.hpp"
#include "sphray/raycast.hpp"
