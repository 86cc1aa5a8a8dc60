// Render a short conversation, parse a canned reply, print the visible text.
#include <cstdio>

#include "oprobe/harmony.hpp"

int main() {
  using namespace oprobe::harmony;

  Conversation conv;
  conv.system_text = "You are a helpful assistant.";
  conv.date = "2026-08-25";
  conv.messages.push_back(user("What is the capital of France?"));

  std::printf("--- prompt ---\n%s\n", render(conv).c_str());

  const std::string reply =
      "<|channel|>analysis<|message|>Simple geography question.<|end|>"
      "<|start|>assistant<|channel|>final<|message|>Paris.<|return|>";
  ParseResult parsed = parse(reply);
  std::printf("--- visible reply ---\n%s\n", final_channel_text(parsed).c_str());
  std::printf("segments=%zu incomplete=%s\n", parsed.segments.size(),
              parsed.incomplete ? "true" : "false");
  return 0;
}
