#pragma once

#include <stdexcept>
#include <string>

namespace oprobe {

/// Base class for every error the toolkit raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define OPROBE_DEFINE_ERROR(NAME, DEFAULT_MSG)                    \
  class NAME : public Error {                                     \
   public:                                                        \
    NAME() : Error(DEFAULT_MSG) {}                                \
    explicit NAME(const std::string& msg) : Error(msg) {}         \
  }

// harmony
OPROBE_DEFINE_ERROR(EmptyConversation, "conversation has no messages");
OPROBE_DEFINE_ERROR(CotWithoutHarmony, "cot_prefix requires include_harmony");
OPROBE_DEFINE_ERROR(MalformedHeader, "special token sequence violates the segment grammar");
OPROBE_DEFINE_ERROR(InvalidMessage, "message violates role/channel invariants");

// backend
OPROBE_DEFINE_ERROR(ZeroTemperature, "temperature 0 is expressed as greedy mode, not via adjust");
OPROBE_DEFINE_ERROR(BackendUnavailable, "backend unavailable");
OPROBE_DEFINE_ERROR(ContextOverflow, "prompt exceeds backend context limit");
OPROBE_DEFINE_ERROR(LogprobsUnsupported, "backend does not return token logprobs");

// judge
OPROBE_DEFINE_ERROR(JudgeUnavailable, "judge endpoint unavailable");
OPROBE_DEFINE_ERROR(UnparseableJudgeReply, "judge reply did not match the documented grammar");

// blackhole
OPROBE_DEFINE_ERROR(EmptyTrace, "trace has no steps");
OPROBE_DEFINE_ERROR(NonTriangularDump, "attention dump has mass above the diagonal");
OPROBE_DEFINE_ERROR(ZeroMass, "attention dump has zero total mass");

// attacks
OPROBE_DEFINE_ERROR(EmptyRequest, "request text is empty");
OPROBE_DEFINE_ERROR(UnknownTemplate, "no template with that id");
OPROBE_DEFINE_ERROR(MissingPlaceholder, "template is missing a required placeholder");
OPROBE_DEFINE_ERROR(BenignRefused, "benign analog was refused; pipeline cannot proceed");
OPROBE_DEFINE_ERROR(EmptyAnalysis, "no analysis-channel text captured");
OPROBE_DEFINE_ERROR(PatternStepMismatch, "interleave pattern does not cover each step exactly once");
OPROBE_DEFINE_ERROR(InvalidRecipe, "recipe parameters fail validation");

// agentsim
OPROBE_DEFINE_ERROR(InvalidSpec, "scenario spec fails validation");
OPROBE_DEFINE_ERROR(NoSuchFile, "no such file in the sandbox");
OPROBE_DEFINE_ERROR(NoSuchProc, "no such process in the sandbox");
OPROBE_DEFINE_ERROR(ToolNotInScenario, "tool is not available in this scenario");

// cli_report
OPROBE_DEFINE_ERROR(EmptyInput, "input collection is empty");
OPROBE_DEFINE_ERROR(PoolTooSmall, "sample size exceeds pool size");
OPROBE_DEFINE_ERROR(ConfigError, "bad configuration");

#undef OPROBE_DEFINE_ERROR

}  // namespace oprobe
