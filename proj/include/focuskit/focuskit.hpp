#pragma once

#include "focuskit/error.hpp"
#include "focuskit/util.hpp"
#include "focuskit/rng.hpp"
#include "focuskit/image.hpp"
#include "focuskit/dataset.hpp"
#include "focuskit/heatmap.hpp"
#include "focuskit/textmetrics.hpp"
#include "focuskit/prompting.hpp"
#include "focuskit/llm_client.hpp"
#include "focuskit/model.hpp"
#include "focuskit/zeroshot.hpp"
#include "focuskit/evalservice.hpp"
#include "focuskit/synth.hpp"
#include "focuskit/manifest.hpp"
