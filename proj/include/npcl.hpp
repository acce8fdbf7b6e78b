#pragma once

#include "npcl/augment.hpp"
#include "npcl/batcher.hpp"
#include "npcl/checkpoint.hpp"
#include "npcl/config.hpp"
#include "npcl/corpus.hpp"
#include "npcl/error.hpp"
#include "npcl/image.hpp"
#include "npcl/image_io.hpp"
#include "npcl/lineval.hpp"
#include "npcl/losses.hpp"
#include "npcl/manifest.hpp"
#include "npcl/matrix.hpp"
#include "npcl/model.hpp"
#include "npcl/pipeline.hpp"
#include "npcl/random.hpp"
#include "npcl/trainer.hpp"
