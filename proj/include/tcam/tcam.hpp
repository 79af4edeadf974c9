#pragma once

#include "tcam/audit.hpp"
#include "tcam/config.hpp"
#include "tcam/corpus.hpp"
#include "tcam/discovery.hpp"
#include "tcam/errors.hpp"
#include "tcam/eval.hpp"
#include "tcam/grounding.hpp"
#include "tcam/losses.hpp"
#include "tcam/mfa.hpp"
#include "tcam/model.hpp"
#include "tcam/pseudoclip.hpp"
#include "tcam/synth.hpp"
#include "tcam/trainer.hpp"
