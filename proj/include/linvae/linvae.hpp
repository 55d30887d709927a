#pragma once

#include "linvae/analytic.hpp"
#include "linvae/common.hpp"
#include "linvae/dataset.hpp"
#include "linvae/diagnostics.hpp"
#include "linvae/harness.hpp"
#include "linvae/objectives.hpp"
#include "linvae/serialize.hpp"
#include "linvae/svg.hpp"
#include "linvae/training.hpp"
#include "linvae/types.hpp"
