#include "bgps/json_io.hpp"

#include "bgps/error.hpp"
#include "detail/json_reader.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#ifndef BGPS_SOURCE_DATA_DIR
#define BGPS_SOURCE_DATA_DIR ""
#endif
#ifndef BGPS_INSTALL_DATA_DIR
#define BGPS_INSTALL_DATA_DIR ""
#endif

namespace bgps {

json encode_logprob(double v) {
    if (v == kNegInf) {
        return "-inf";
    }
    if (!std::isfinite(v)) {
        throw InvalidScore("cannot encode a non-finite log-prob other than -inf");
    }
    return v;
}

double decode_logprob(const json & j, const std::string & path) {
    if (j.is_string()) {
        if (j.get<std::string>() == "-inf") {
            return kNegInf;
        }
        throw SchemaViolation(path, "only \"-inf\" is accepted as a string log-prob");
    }
    if (!j.is_number()) {
        throw SchemaViolation(path, "expected a number");
    }
    return j.get<double>();
}

std::string canonical_dump(const json & j) {
    // nlohmann objects keep keys sorted; dump() without indent has no whitespace
    return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

json to_json(const SearchConfig & cfg) {
    return json{{"lambda", cfg.lambda},
                {"num_latents", cfg.num_latents},
                {"beam_size", cfg.beam_size},
                {"expand", cfg.expand},
                {"extra_expand", cfg.extra_expand},
                {"temperature", cfg.temperature},
                {"max_len", cfg.max_len},
                {"min_len", cfg.min_len},
                {"seed", cfg.seed},
                {"deterministic_mode", cfg.deterministic_mode},
                {"fixed_latents", cfg.fixed_latents},
                {"t_prime", cfg.t_prime},
                {"parallelism", cfg.parallelism}};
}

json to_json(const AttributeSpec & attribute) {
    return json{{"name", attribute.attribute_name},
                {"class_names", attribute.class_names},
                {"target_class", attribute.target_class}};
}

json to_json(const PromptTemplate & tmpl) {
    return json{{"system_prompt", tmpl.system_prompt},
                {"user_prompt", tmpl.user_prompt},
                {"model_prefix", tmpl.model_prefix}};
}

json to_json(const StepRecord & rec) {
    json candidates = json::array();
    for (const auto & c : rec.candidates) {
        candidates.push_back(json{{"text", c.text},
                                  {"token_ids", c.token_ids},
                                  {"parent", c.parent},
                                  {"lm_logprob", encode_logprob(c.lm_logprob)},
                                  {"cls_logprob", encode_logprob(c.cls_logprob)},
                                  {"joint", encode_logprob(c.joint)}});
    }
    json out{{"step", rec.step},
             {"beam_budget", rec.beam_budget},
             {"pool_size", rec.pool_size},
             {"candidates", std::move(candidates)},
             {"kept", rec.kept},
             {"finished", rec.finished},
             {"rng_draws", rec.rng_draws}};
    if (rec.eos_unmasked) {
        out["eos_unmasked"] = true;
    }
    return out;
}

json ledger_header(const SearchLedger & ledger) {
    return json{{"search", to_json(ledger.config)},
                {"attribute", to_json(ledger.attribute)},
                {"template", to_json(ledger.prompt_template)},
                {"lm_backend", ledger.lm_backend},
                {"steps", ledger.steps.size()},
                {"degenerate", ledger.degenerate}};
}

SearchConfig search_config_from_json(const json & j, const std::string & path) {
    detail::ObjectReader r(j, path);
    SearchConfig cfg;
    r.opt("lambda", cfg.lambda);
    r.opt("num_latents", cfg.num_latents);
    r.opt("beam_size", cfg.beam_size);
    r.opt("expand", cfg.expand);
    r.opt("extra_expand", cfg.extra_expand);
    r.opt("temperature", cfg.temperature);
    r.opt("max_len", cfg.max_len);
    r.opt("min_len", cfg.min_len);
    r.opt("seed", cfg.seed);
    r.opt("deterministic_mode", cfg.deterministic_mode);
    r.opt("fixed_latents", cfg.fixed_latents);
    r.opt("t_prime", cfg.t_prime);
    r.opt("parallelism", cfg.parallelism);
    r.finish();
    try {
        cfg.validate();
    } catch (const InvalidArgument & e) {
        throw ConfigError(path, e.what());
    }
    return cfg;
}

AttributeSpec attribute_from_json(const json & j, const std::string & path) {
    detail::ObjectReader r(j, path);
    AttributeSpec a;
    r.req("name", a.attribute_name);
    r.req("class_names", a.class_names);
    r.req("target_class", a.target_class);
    r.finish();
    try {
        a.validate();
    } catch (const InvalidArgument & e) {
        throw ConfigError(path, e.what());
    }
    return a;
}

PromptTemplate template_from_json(const json & j, const std::string & path) {
    detail::ObjectReader r(j, path);
    PromptTemplate t;
    r.opt("system_prompt", t.system_prompt);
    r.opt("user_prompt", t.user_prompt);
    r.opt("model_prefix", t.model_prefix);
    r.finish();
    return t;
}

std::filesystem::path data_dir() {
    if (const char * env = std::getenv("BGPS_DATA_DIR"); env != nullptr && *env != '\0') {
        return env;
    }
    for (const char * candidate : {BGPS_SOURCE_DATA_DIR, BGPS_INSTALL_DATA_DIR}) {
        std::error_code ec;
        if (*candidate != '\0' && std::filesystem::is_directory(candidate, ec)) {
            return candidate;
        }
    }
    return "data";
}

json read_json_file(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(path.string(), "cannot open file");
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error & e) {
        throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
    }
}

}  // namespace bgps
