#pragma once

// Umbrella header.

#include "sera/bank.hpp"       // IWYU pragma: export
#include "sera/embed.hpp"      // IWYU pragma: export
#include "sera/errors.hpp"     // IWYU pragma: export
#include "sera/failure.hpp"    // IWYU pragma: export
#include "sera/harness.hpp"    // IWYU pragma: export
#include "sera/hash.hpp"       // IWYU pragma: export
#include "sera/jsonl.hpp"      // IWYU pragma: export
#include "sera/llm.hpp"        // IWYU pragma: export
#include "sera/recommend.hpp"  // IWYU pragma: export
#include "sera/repair.hpp"     // IWYU pragma: export
#include "sera/scenario.hpp"   // IWYU pragma: export
