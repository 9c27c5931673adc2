// Copyright 2026 The Memlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "memlab/error.h"

namespace memlab {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension:
      return "dimension";
    case ErrorCode::kShape:
      return "shape";
    case ErrorCode::kVocab:
      return "vocab";
    case ErrorCode::kContextOverflow:
      return "context_overflow";
    case ErrorCode::kDegenerateMask:
      return "degenerate_mask";
    case ErrorCode::kNumeric:
      return "numeric";
    case ErrorCode::kSpec:
      return "spec";
    case ErrorCode::kLength:
      return "length";
    case ErrorCode::kTrainingFailure:
      return "training_failure";
    case ErrorCode::kUndefinedBaseline:
      return "undefined_baseline";
    case ErrorCode::kEmptyInput:
      return "empty_input";
    case ErrorCode::kConfig:
      return "config";
    case ErrorCode::kIo:
      return "io";
    case ErrorCode::kFormat:
      return "format";
  }
  return "unknown";
}

}  // namespace memlab
