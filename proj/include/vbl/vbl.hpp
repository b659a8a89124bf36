#pragma once

#include "vbl/error.hpp"
#include "vbl/layout.hpp"
#include "vbl/scene.hpp"
#include "vbl/bits.hpp"
#include "vbl/measurement.hpp"
#include "vbl/fisher.hpp"
#include "vbl/alloc.hpp"
#include "vbl/validate.hpp"
#include "vbl/io.hpp"
