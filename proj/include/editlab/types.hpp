#pragma once

#include <cstdint>
#include <vector>

namespace editlab {

using TokenId = int;
using TokenList = std::vector<TokenId>;

enum class QueryType { visual, textual, compositional };

enum class EditKind { visual, textual };

const char* to_string(QueryType t);
const char* to_string(EditKind k);

}  // namespace editlab
