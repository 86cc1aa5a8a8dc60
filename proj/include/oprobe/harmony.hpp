#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oprobe/errors.hpp"

/**
 * Role/channel-structured chat wire format.
 *
 * Segment grammar (one row per token, bit-exact):
 *
 *   token        string
 *   -----------  -------------
 *   start        <|start|>
 *   channel      <|channel|>
 *   message      <|message|>
 *   end          <|end|>
 *   return       <|return|>
 *
 *   segment   := [ start role-name ] [ channel channel-name ] message content
 *                ( end | return )?
 *              | bare-text                      (no special tokens at all)
 *   role-name := system | developer | user | assistant | tool
 *   channel   := analysis | commentary | final
 *
 * A history message terminates with <|end|>; a conversation whose final
 * message is an assistant turn terminates that turn with <|return|>.
 * Rendering and parsing are pure functions over immutable values.
 */
namespace oprobe::harmony {

inline constexpr std::string_view kStart = "<|start|>";
inline constexpr std::string_view kChannelTok = "<|channel|>";
inline constexpr std::string_view kMessageTok = "<|message|>";
inline constexpr std::string_view kEnd = "<|end|>";
inline constexpr std::string_view kReturn = "<|return|>";

enum class Role { System, Developer, User, Assistant, Tool };
enum class Channel { Analysis, Commentary, Final };
enum class ReasoningEffort { Low, Medium, High };

inline constexpr std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::Developer: return "developer";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
  }
  return "user";
}

inline constexpr std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::Analysis: return "analysis";
    case Channel::Commentary: return "commentary";
    case Channel::Final: return "final";
  }
  return "final";
}

inline constexpr std::string_view to_string(ReasoningEffort e) {
  switch (e) {
    case ReasoningEffort::Low: return "low";
    case ReasoningEffort::Medium: return "medium";
    case ReasoningEffort::High: return "high";
  }
  return "medium";
}

inline std::optional<Role> role_from_string(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "developer") return Role::Developer;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  if (s == "tool") return Role::Tool;
  return std::nullopt;
}

inline std::optional<Channel> channel_from_string(std::string_view s) {
  if (s == "analysis") return Channel::Analysis;
  if (s == "commentary") return Channel::Commentary;
  if (s == "final") return Channel::Final;
  return std::nullopt;
}

struct Message {
  Role role = Role::User;
  std::optional<Channel> channel;  // present iff role == Assistant
  std::string content;
};

inline Message user(std::string content) { return {Role::User, std::nullopt, std::move(content)}; }
inline Message developer(std::string content) { return {Role::Developer, std::nullopt, std::move(content)}; }
inline Message system(std::string content) { return {Role::System, std::nullopt, std::move(content)}; }
inline Message tool(std::string content) { return {Role::Tool, std::nullopt, std::move(content)}; }
inline Message assistant(Channel ch, std::string content) { return {Role::Assistant, ch, std::move(content)}; }

struct Conversation {
  std::vector<Message> messages;
  std::optional<std::string> date;  // ISO-8601 calendar date, rendered verbatim
  std::optional<std::string> system_text;
};

struct RenderOptions {
  bool include_harmony = true;
  std::optional<std::string> cot_prefix;  // pre-seeded analysis content
  std::optional<ReasoningEffort> reasoning_effort;
  // Append "<|start|>assistant" so a backend continues the conversation.
  // Off for transcript round-trips; ignored when cot_prefix opens the
  // assistant turn itself.
  bool add_generation_prompt = true;
};

namespace detail {

inline void validate(const Conversation& conv) {
  if (conv.messages.empty()) throw EmptyConversation();
  for (const auto& m : conv.messages) {
    const bool has = m.channel.has_value();
    if (has != (m.role == Role::Assistant)) {
      throw InvalidMessage("channel must be present iff role is assistant");
    }
  }
}

/// Content of the synthesized leading system segment; empty if nothing to say.
inline std::string system_header_content(const Conversation& conv, const RenderOptions& opts) {
  std::string out;
  auto add_line = [&](std::string_view line) {
    if (!out.empty()) out += '\n';
    out += line;
  };
  if (conv.system_text) add_line(*conv.system_text);
  if (conv.date) add_line("Current date: " + *conv.date);
  if (opts.reasoning_effort) add_line(std::string("Reasoning: ") + std::string(to_string(*opts.reasoning_effort)));
  return out;
}

}  // namespace detail

/// "<|start|>assistant<|channel|>analysis<|message|>" + seed, unterminated, so
/// generation continues inside the seeded reasoning.
inline std::string opened_analysis_segment(std::string_view seed) {
  std::string out;
  out += kStart;
  out += "assistant";
  out += kChannelTok;
  out += "analysis";
  out += kMessageTok;
  out += seed;
  return out;
}

inline std::string render(const Conversation& conv, const RenderOptions& opts = {}) {
  detail::validate(conv);
  if (opts.cot_prefix && !opts.include_harmony) throw CotWithoutHarmony();

  if (!opts.include_harmony) {
    std::string out;
    bool first = true;
    auto add = [&](const std::string& text) {
      if (!first) out += "\n\n";
      out += text;
      first = false;
    };
    if (conv.system_text) add(*conv.system_text);
    for (const auto& m : conv.messages) add(m.content);
    return out;
  }

  std::string out;
  auto emit = [&](std::string_view role, std::optional<Channel> ch, const std::string& content,
                  std::string_view term) {
    out += kStart;
    out += role;
    if (ch) {
      out += kChannelTok;
      out += to_string(*ch);
    }
    out += kMessageTok;
    out += content;
    out += term;
  };

  const std::string sys = detail::system_header_content(conv, opts);
  if (!sys.empty()) emit("system", std::nullopt, sys, kEnd);

  for (std::size_t i = 0; i < conv.messages.size(); ++i) {
    const Message& m = conv.messages[i];
    const bool last_assistant = (i + 1 == conv.messages.size()) && m.role == Role::Assistant;
    emit(to_string(m.role), m.channel, m.content, last_assistant ? kReturn : kEnd);
  }

  const bool ends_with_assistant = conv.messages.back().role == Role::Assistant;
  if (opts.cot_prefix) {
    out += opened_analysis_segment(*opts.cot_prefix);
  } else if (opts.add_generation_prompt && !ends_with_assistant) {
    out += kStart;
    out += "assistant";
  }
  return out;
}

inline std::string strip_harmony(const Conversation& conv) {
  RenderOptions opts;
  opts.include_harmony = false;
  return render(conv, opts);
}

enum class Terminator { None, End, Return };

struct Segment {
  std::optional<Role> role;
  std::optional<Channel> channel;
  std::string content;

  // Raw header text as it appeared on the wire, kept so parses reconstruct
  // their input losslessly even for unknown role/channel names.
  std::optional<std::string> role_name;
  std::optional<std::string> channel_name;
  bool had_message_token = false;
  Terminator terminator = Terminator::None;
  bool unknown_channel = false;  // unmapped name folded to commentary
  bool unknown_role = false;

  /// Channel used by downstream consumers; absent means final.
  Channel effective_channel() const { return channel.value_or(Channel::Final); }
};

struct ParseResult {
  std::vector<Segment> segments;
  bool incomplete = false;  // final segment opened but never terminated
};

namespace detail {

enum class Tok { Start, Channel, Message, End, Return };

inline constexpr std::array<std::pair<std::string_view, Tok>, 5> kTokens{{
    {kStart, Tok::Start},
    {kChannelTok, Tok::Channel},
    {kMessageTok, Tok::Message},
    {kEnd, Tok::End},
    {kReturn, Tok::Return},
}};

/// Earliest special token at or after `from`. Non-token "<|...|>" text is
/// skipped: truncated generations can contain novel token-like spans.
inline bool find_special(std::string_view raw, std::size_t from, std::size_t& at, Tok& tok) {
  std::size_t pos = from;
  while (true) {
    pos = raw.find("<|", pos);
    if (pos == std::string_view::npos) return false;
    for (const auto& [text, t] : kTokens) {
      if (raw.compare(pos, text.size(), text) == 0) {
        at = pos;
        tok = t;
        return true;
      }
    }
    pos += 2;
  }
}

inline void assign_role(Segment& seg, std::string name) {
  seg.role = role_from_string(name);
  seg.unknown_role = !seg.role.has_value();
  seg.role_name = std::move(name);
}

inline void assign_channel(Segment& seg, std::string name) {
  seg.channel = channel_from_string(name);
  if (!seg.channel) {
    seg.channel = Channel::Commentary;
    seg.unknown_channel = true;
  }
  seg.channel_name = std::move(name);
}

}  // namespace detail

/**
 * Split model-emitted text into channel-tagged segments.
 *
 * Accepts text truncated anywhere, including mid-header. Text containing no
 * special tokens parses as a single bare segment (effective channel final).
 * Throws MalformedHeader when the token sequence itself is impossible, e.g. a
 * terminator with no open segment or <|channel|> not followed by <|message|>.
 */
inline ParseResult parse(const std::string& raw) {
  using detail::Tok;
  ParseResult res;
  const std::size_t n = raw.size();
  std::size_t pos = 0;

  auto malformed = [&](std::size_t at, const char* what) {
    throw MalformedHeader(std::string(what) + " at offset " + std::to_string(at));
  };

  while (pos < n) {
    std::size_t at = 0;
    Tok tok{};
    if (!detail::find_special(raw, pos, at, tok)) {
      Segment bare;
      bare.content = raw.substr(pos);
      res.segments.push_back(std::move(bare));
      pos = n;
      break;
    }
    if (at > pos) {  // bare text before the next header
      Segment bare;
      bare.content = raw.substr(pos, at - pos);
      res.segments.push_back(std::move(bare));
      pos = at;
      continue;
    }

    Segment seg;
    if (tok == Tok::End || tok == Tok::Return) malformed(at, "terminator with no open segment");

    if (tok == Tok::Start) {
      pos += kStart.size();
      std::size_t next = 0;
      Tok next_tok{};
      if (!detail::find_special(raw, pos, next, next_tok)) {  // truncated mid-header
        detail::assign_role(seg, raw.substr(pos));
        res.segments.push_back(std::move(seg));
        res.incomplete = true;
        return res;
      }
      detail::assign_role(seg, raw.substr(pos, next - pos));
      pos = next;
      tok = next_tok;
      if (tok == Tok::Start || tok == Tok::End || tok == Tok::Return) {
        malformed(pos, "role name must be followed by <|channel|> or <|message|>");
      }
    }

    if (tok == Tok::Channel) {
      pos += kChannelTok.size();
      std::size_t next = 0;
      Tok next_tok{};
      if (!detail::find_special(raw, pos, next, next_tok)) {  // truncated mid-header
        detail::assign_channel(seg, raw.substr(pos));
        res.segments.push_back(std::move(seg));
        res.incomplete = true;
        return res;
      }
      detail::assign_channel(seg, raw.substr(pos, next - pos));
      pos = next;
      if (next_tok != Tok::Message) malformed(pos, "channel name must be followed by <|message|>");
      tok = Tok::Message;
    }

    // tok == Tok::Message
    pos += kMessageTok.size();
    seg.had_message_token = true;
    std::size_t next = 0;
    Tok next_tok{};
    if (!detail::find_special(raw, pos, next, next_tok)) {
      seg.content = raw.substr(pos);
      res.segments.push_back(std::move(seg));
      res.incomplete = true;
      return res;
    }
    seg.content = raw.substr(pos, next - pos);
    pos = next;
    if (next_tok == Tok::End) {
      seg.terminator = Terminator::End;
      pos += kEnd.size();
    } else if (next_tok == Tok::Return) {
      seg.terminator = Terminator::Return;
      pos += kReturn.size();
    }  // else a new header begins: segment closes unterminated mid-stream
    res.segments.push_back(std::move(seg));
  }
  return res;
}

/// Exact inverse of parse: header tokens + names + content + terminators.
inline std::string reconstruct(const std::vector<Segment>& segments) {
  std::string out;
  for (const Segment& s : segments) {
    if (s.role_name) {
      out += kStart;
      out += *s.role_name;
    }
    if (s.channel_name) {
      out += kChannelTok;
      out += *s.channel_name;
    }
    if (s.had_message_token) out += kMessageTok;
    out += s.content;
    switch (s.terminator) {
      case Terminator::End: out += kEnd; break;
      case Terminator::Return: out += kReturn; break;
      case Terminator::None: break;
    }
  }
  return out;
}

/// Concatenated content of every final-channel segment; judges consume only
/// this user-visible portion.
inline std::string final_channel_text(const std::vector<Segment>& segments) {
  std::string out;
  for (const Segment& s : segments) {
    if (s.effective_channel() == Channel::Final) out += s.content;
  }
  return out;
}

inline std::string final_channel_text(const ParseResult& res) {
  return final_channel_text(res.segments);
}

inline std::string analysis_channel_text(const std::vector<Segment>& segments) {
  std::string out;
  for (const Segment& s : segments) {
    if (s.effective_channel() == Channel::Analysis) out += s.content;
  }
  return out;
}

/// final_channel_text(parse(raw)), falling back to the raw text when the
/// token stream is malformed. Search and judging paths must not abort on a
/// single garbled generation.
inline std::string final_text_or_raw(const std::string& raw) {
  try {
    return final_channel_text(parse(raw));
  } catch (const MalformedHeader&) {
    return raw;
  }
}

}  // namespace oprobe::harmony
