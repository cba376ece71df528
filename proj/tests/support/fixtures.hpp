#pragma once

#include <meegfem/generate.hpp>

namespace meeg::fixtures
{
using namespace meeg::generate;
}
