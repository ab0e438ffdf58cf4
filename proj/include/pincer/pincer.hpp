#pragma once

// Umbrella header.

#include "pincer/archive.hpp"
#include "pincer/checkpoint.hpp"
#include "pincer/config.hpp"
#include "pincer/corpus.hpp"
#include "pincer/datagen.hpp"
#include "pincer/encoders.hpp"
#include "pincer/errors.hpp"
#include "pincer/evaluation.hpp"
#include "pincer/feature_store.hpp"
#include "pincer/image.hpp"
#include "pincer/intent_codebook.hpp"
#include "pincer/ops.hpp"
#include "pincer/optim.hpp"
#include "pincer/pipeline.hpp"
#include "pincer/random.hpp"
#include "pincer/retrieval.hpp"
#include "pincer/stage1.hpp"
#include "pincer/stage2.hpp"
#include "pincer/tensor.hpp"
#include "pincer/workflow.hpp"
