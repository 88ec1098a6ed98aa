#pragma once

#include "editlab/world.hpp"

namespace editlab {

// Split of a query into its visual and textual knowledge parts.
// compositional -> both sub-queries, text part holds exactly one placeholder;
// visual -> image sub-query only; textual -> text sub-query only.
struct DecomposedQuery {
  QueryType qtype = QueryType::textual;
  TokenList visual_question;  // identity question words (no image tokens)
  TokenList visual_image;     // image tokens
  TokenList text_question;    // fact question; placeholder token for compositional
  int placeholder_index = -1;

  bool has_visual() const { return !visual_image.empty(); }
  bool has_text() const { return !text_question.empty(); }
};

// Rule-based split over the closed question grammar. Unrecognized token
// patterns raise DecompositionError rather than guessing.
DecomposedQuery decompose(const Vocab& vocab, const Query& q);

// Replaces the placeholder with a retrieved entity answer.
TokenList substitute_placeholder(const DecomposedQuery& dq, const TokenList& entity_answer);

}  // namespace editlab
