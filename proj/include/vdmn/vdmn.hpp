#pragma once

// Umbrella header.

#include "vdmn/dual.hpp"
#include "vdmn/errors.hpp"
#include "vdmn/voigt.hpp"
#include "vdmn/laminate.hpp"
#include "vdmn/riemannian.hpp"
#include "vdmn/propagation.hpp"
#include "vdmn/dataset.hpp"
#include "vdmn/training.hpp"
#include "vdmn/norton.hpp"
#include "vdmn/online.hpp"
#include "vdmn/calibration.hpp"
#include "vdmn/inverse.hpp"
#include "vdmn/datagen.hpp"
#include "vdmn/model_io.hpp"
