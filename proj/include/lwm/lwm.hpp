#pragma once

#include "lwm/checkpoint.hpp"
#include "lwm/common.hpp"
#include "lwm/config.hpp"
#include "lwm/data.hpp"
#include "lwm/dynamics.hpp"
#include "lwm/image_io.hpp"
#include "lwm/lam.hpp"
#include "lwm/metrics.hpp"
#include "lwm/pipeline.hpp"
#include "lwm/server.hpp"
#include "lwm/st_transformer.hpp"
#include "lwm/tokenizer.hpp"
#include "lwm/vq.hpp"
