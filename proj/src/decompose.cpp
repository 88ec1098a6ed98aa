#include "editlab/decompose.hpp"

#include "editlab/errors.hpp"

namespace editlab {

namespace {

TokenList expect_image_run(const Vocab& vocab, const TokenList& body, size_t start,
                           const char* what) {
  if (start >= body.size() || body[start] != Vocab::kImg) {
    throw DecompositionError(std::string(what) + ": expected <img> marker");
  }
  TokenList image;
  for (size_t i = start + 1; i < body.size(); ++i) {
    if (!vocab.is_image_token(body[i])) {
      throw DecompositionError(std::string(what) + ": non-image token inside image run");
    }
    image.push_back(body[i]);
  }
  if (static_cast<int>(image.size()) != vocab.image_positions) {
    throw DecompositionError(std::string(what) + ": image run has " +
                             std::to_string(image.size()) + " tokens, expected " +
                             std::to_string(vocab.image_positions));
  }
  return image;
}

}  // namespace

DecomposedQuery decompose(const Vocab& vocab, const Query& q) {
  const TokenList& body = q.body;
  if (body.size() < 3) throw DecompositionError("query too short for the template grammar");

  DecomposedQuery dq;
  if (body[0] == Vocab::kWho) {
    if (!vocab.is_frame(body[1])) throw DecompositionError("identity query: missing frame word");
    dq.qtype = QueryType::visual;
    dq.visual_question = {body[0], body[1]};
    dq.visual_image = expect_image_run(vocab, body, 2, "identity query");
    return dq;
  }
  if (vocab.is_relation(body[0])) {
    if (!vocab.is_frame(body[1])) throw DecompositionError("fact query: missing frame word");
    if (vocab.is_entity(body[2])) {
      if (body.size() != 3) throw DecompositionError("fact query: trailing tokens");
      dq.qtype = QueryType::textual;
      dq.text_question = body;
      return dq;
    }
    if (body[2] == Vocab::kShown) {
      dq.qtype = QueryType::compositional;
      // the visual sub-question asks the identity of the depicted entity
      dq.visual_question = {Vocab::kWho, vocab.frame(0)};
      dq.visual_image = expect_image_run(vocab, body, 3, "compositional query");
      dq.text_question = {body[0], body[1], Vocab::kShown};
      dq.placeholder_index = 2;
      return dq;
    }
    throw DecompositionError("fact query: expected subject entity or placeholder");
  }
  throw DecompositionError("unrecognized question template");
}

TokenList substitute_placeholder(const DecomposedQuery& dq, const TokenList& entity_answer) {
  if (dq.qtype != QueryType::compositional || dq.placeholder_index < 0) {
    throw PreconditionError("substitution requires a compositional query with a placeholder");
  }
  if (entity_answer.empty()) {
    throw PreconditionError("substitution needs a nonempty entity answer");
  }
  TokenList out;
  out.reserve(dq.text_question.size() + entity_answer.size() - 1);
  for (size_t i = 0; i < dq.text_question.size(); ++i) {
    if (static_cast<int>(i) == dq.placeholder_index) {
      out.insert(out.end(), entity_answer.begin(), entity_answer.end());
    } else {
      out.push_back(dq.text_question[i]);
    }
  }
  return out;
}

}  // namespace editlab
