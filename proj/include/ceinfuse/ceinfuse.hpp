#pragma once

// Umbrella header for the ceinfuse toolkit.

#include "ceinfuse/matrix.hpp"
#include "ceinfuse/kernels.hpp"
#include "ceinfuse/tokenizer.hpp"
#include "ceinfuse/types.hpp"
#include "ceinfuse/model.hpp"
#include "ceinfuse/checkpoint.hpp"
#include "ceinfuse/bm25.hpp"
#include "ceinfuse/training.hpp"
#include "ceinfuse/retrieval.hpp"
#include "ceinfuse/eval.hpp"
#include "ceinfuse/bench.hpp"
#include "ceinfuse/dataio.hpp"
#include "ceinfuse/synth.hpp"
#include "ceinfuse/pipeline.hpp"
