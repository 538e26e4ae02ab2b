// SPDX-License-Identifier: Apache-2.0

#ifndef CONDANOM_CONDANOM_HPP
#define CONDANOM_CONDANOM_HPP

#include "condanom/bayesmodel.hpp"
#include "condanom/dataset.hpp"
#include "condanom/pipeline.hpp"
#include "condanom/similarity.hpp"

#endif  // CONDANOM_CONDANOM_HPP
