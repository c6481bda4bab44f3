#pragma once

#include "bgps/core.hpp"
#include "bgps/scorers.hpp"
#include "bgps/search.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace bgps {

using json = nlohmann::json;

// Log-probs travel as decimal doubles; -inf is the string "-inf".
json encode_logprob(double v);
// Throws SchemaViolation(path) for anything else.
double decode_logprob(const json & j, const std::string & path);

// Sorted keys, no insignificant whitespace, UTF-8.
std::string canonical_dump(const json & j);

json to_json(const SearchConfig & cfg);
json to_json(const AttributeSpec & attribute);
json to_json(const PromptTemplate & tmpl);
json to_json(const StepRecord & rec);
json ledger_header(const SearchLedger & ledger);

// Strict readers: unknown keys and wrong types raise ConfigError with the
// JSON path prefixed by `path`. Missing keys keep the defaults, except
// for AttributeSpec where every field is required.
SearchConfig search_config_from_json(const json & j, const std::string & path);
AttributeSpec attribute_from_json(const json & j, const std::string & path);
PromptTemplate template_from_json(const json & j, const std::string & path);

// Directory holding fixtures, presets and lexicons: $BGPS_DATA_DIR, else
// the source tree's data/, else the installed share/bgps/data.
std::filesystem::path data_dir();

json read_json_file(const std::filesystem::path & path);

}  // namespace bgps
