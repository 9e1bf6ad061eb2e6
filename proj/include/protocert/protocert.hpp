// protocert.hpp -- umbrella include for the whole library.
#pragma once

#include "protocert/attack.hpp"
#include "protocert/certify.hpp"
#include "protocert/common.hpp"
#include "protocert/embedding.hpp"
#include "protocert/episode.hpp"
#include "protocert/harness.hpp"
#include "protocert/hoeffding.hpp"
#include "protocert/io_util.hpp"
#include "protocert/model_io.hpp"
#include "protocert/prototype.hpp"
#include "protocert/rng.hpp"
#include "protocert/smoothing.hpp"
#include "protocert/train.hpp"
