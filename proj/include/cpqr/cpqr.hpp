// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cpqr/cp_als.hpp"
#include "cpqr/dense_tensor.hpp"
#include "cpqr/errors.hpp"
#include "cpqr/experiments.hpp"
#include "cpqr/io.hpp"
#include "cpqr/kernels.hpp"
#include "cpqr/kruskal_tensor.hpp"
#include "cpqr/leastsq.hpp"
#include "cpqr/products.hpp"
#include "cpqr/random.hpp"
#include "cpqr/synth.hpp"
