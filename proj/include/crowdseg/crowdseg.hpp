#pragma once

// Umbrella header: the full smart-annotation toolkit.

#include "crowdseg/backend.hpp"
#include "crowdseg/bench.hpp"
#include "crowdseg/box.hpp"
#include "crowdseg/checkpoint.hpp"
#include "crowdseg/config.hpp"
#include "crowdseg/dataset.hpp"
#include "crowdseg/eps.hpp"
#include "crowdseg/eval.hpp"
#include "crowdseg/formats.hpp"
#include "crowdseg/heads.hpp"
#include "crowdseg/image.hpp"
#include "crowdseg/mask.hpp"
#include "crowdseg/nms.hpp"
#include "crowdseg/oracle_backend.hpp"
#include "crowdseg/parallel.hpp"
#include "crowdseg/pipeline.hpp"
#include "crowdseg/promptgen.hpp"
#include "crowdseg/pwdnet.hpp"
#include "crowdseg/real_backend.hpp"
#include "crowdseg/rle.hpp"
#include "crowdseg/rng.hpp"
#include "crowdseg/scene.hpp"
#include "crowdseg/tensor.hpp"
#include "crowdseg/trainer.hpp"
