// Copyright 2026 The esr-pcg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "esr/error.hpp"
#include "esr/sparse.hpp"
#include "esr/matrix_market.hpp"
#include "esr/generators.hpp"
#include "esr/planner.hpp"
#include "esr/cluster.hpp"
#include "esr/pcg.hpp"
#include "esr/recovery.hpp"
#include "esr/run.hpp"
#include "esr/json_io.hpp"
#include "esr/harness.hpp"
#include "esr/verify.hpp"
#include "esr/cli.hpp"
