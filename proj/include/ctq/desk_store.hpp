#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ctq/corpus.hpp"
#include "ctq/features.hpp"

namespace ctq {

// Lexical stand-ins for the model-backed scorers, for fixtures and
// desk-scale runs without neural models. Real scores are produced offline
// and loaded into a ScoreStore from file.

/// Hashed character-trigram bag, unit-normalized.
std::vector<float> lexical_embedding(std::string_view text, std::size_t dim = 64);

/// Stand-in for a QE score between two texts, in [-1, 1].
double lexical_pair_score(std::string_view a, std::string_view b);

/// Stand-in perplexity, > 1, decreasing with the share of repeated tokens.
double lexical_perplexity(std::string_view text);

/// Adds every entry needed to extract features for each (candidate, query)
/// combination in `shortlists` (pair ids into `db`).
void populate_lexical_store(ScoreStore& store, const ExampleDatabase& db, const std::vector<std::string>& queries,
                            const std::vector<std::vector<std::size_t>>& shortlists);

}  // namespace ctq
