#pragma once

#include "invmetric/core.hpp"
#include "invmetric/data.hpp"
#include "invmetric/eval.hpp"
#include "invmetric/features.hpp"
#include "invmetric/io.hpp"
#include "invmetric/kernelmap.hpp"
#include "invmetric/layer1.hpp"
#include "invmetric/metric.hpp"
#include "invmetric/numerics.hpp"
#include "invmetric/pipeline.hpp"
#include "invmetric/verify.hpp"
