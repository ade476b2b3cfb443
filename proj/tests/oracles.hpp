#pragma once

#include "emo/app/reference.hpp"

namespace oracle = emo::reference;
