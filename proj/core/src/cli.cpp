#include "bgps/cli.hpp"

#include "bgps/error.hpp"
#include "bgps/json_io.hpp"
#include "bgps/rng.hpp"
#include "bgps/synthbench.hpp"
#include "bgps/text.hpp"
#include "detail/json_reader.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace bgps::cli {

using nlohmann::json;
using detail::ObjectReader;

namespace {

constexpr const char * kConfigFile = "config.json";
constexpr const char * kPromptsFile = "prompts.jsonl";
constexpr const char * kEvalFile = "eval.jsonl";

bool looks_like_path(const std::string & s) {
    return s.find('/') != std::string::npos || (s.size() > 5 && s.ends_with(".json"));
}

void write_file(const fs::path & path, const std::string & content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        out << content;
        if (!out.flush()) {
            throw Error("cannot write " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

class JsonlAppender {
  public:
    explicit JsonlAppender(const fs::path & path) : out_(path, std::ios::binary | std::ios::app), path_(path) {
        if (!out_) {
            throw Error("cannot open " + path.string());
        }
    }

    void append(const json & j) {
        out_ << canonical_dump(j) << '\n';
        if (!out_.flush()) {
            throw Error("cannot append to " + path_.string());
        }
    }

  private:
    std::ofstream out_;
    fs::path path_;
};

std::string run_dir_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", index);
    return buf;
}

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

synth::Fixture resolve_fixture(const std::string & name_or_path) {
    return looks_like_path(name_or_path) ? synth::load_fixture(name_or_path) : synth::make_fixture(name_or_path);
}

fs::path fixture_path(const std::string & name_or_path) {
    return looks_like_path(name_or_path) ? fs::path(name_or_path)
                                         : data_dir() / "fixtures" / (name_or_path + ".json");
}

// Runs fn(i) for i in [0, n) on up to `workers` threads and calls commit(i)
// in index order, serialized. The first failure stops new work and is
// rethrown after everything in flight has drained.
template <typename Work, typename Commit>
void ordered_parallel(std::size_t n, int workers, Work && fn, Commit && commit) {
    const auto threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
            commit(i);
        }
        return;
    }
    std::mutex mutex;
    std::vector<char> done(n, 0);
    std::size_t next_commit = 0;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n && !failed; i = next++) {
                    try {
                        fn(i);
                        std::lock_guard lock(mutex);
                        done[i] = 1;
                        while (next_commit < n && done[next_commit] && !failed) {
                            commit(next_commit);
                            ++next_commit;
                        }
                    } catch (...) {
                        std::lock_guard lock(mutex);
                        if (!error) {
                            error = std::current_exception();
                        }
                        failed = true;
                    }
                }
            });
        }
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

// Fields that may change between an interrupted run and its resumption.
json comparable(RunConfig cfg) {
    cfg.search.parallelism = 1;
    cfg.eval.parallelism = 1;
    cfg.backend.url.clear();
    cfg.eval.eval_lm.url.clear();
    cfg.output_dir.clear();
    return to_json(cfg);
}

BackendConfig parse_backend(const json & j, const std::string & path) {
    ObjectReader r(j, path);
    BackendConfig b;
    r.req("kind", b.kind);
    if (b.kind == "synthetic") {
        r.req("fixture", b.fixture);
        r.opt("no_face_rate", b.no_face_rate);
        if (!(b.no_face_rate >= 0.0 && b.no_face_rate < 1.0)) {
            throw ConfigError(r.child("no_face_rate"), "must lie in [0, 1)");
        }
    } else if (b.kind == "sidecar") {
        r.opt("url", b.url);
        r.opt("bearer_token_env", b.bearer_token_env);
        r.opt("timeout_ms", b.client.timeout_ms);
        r.opt("max_retries", b.client.max_retries);
        r.opt("backoff_ms", b.client.backoff_ms);
        r.opt("max_in_flight", b.client.max_in_flight);
        r.opt("cache", b.client.cache);
        if (b.client.timeout_ms < 1 || b.client.max_retries < 0 || b.client.backoff_ms < 0 ||
            b.client.max_in_flight < 1) {
            throw ConfigError(path, "client limits must be positive");
        }
        if (const auto * g = r.get("generation")) {
            ObjectReader gr(*g, r.child("generation"));
            gr.opt("steps", b.generation.steps);
            gr.opt("guidance", b.generation.guidance);
            gr.opt("scheduler", b.generation.scheduler);
            gr.opt("width", b.generation.width);
            gr.opt("height", b.generation.height);
            gr.finish();
        }
    } else {
        throw ConfigError(r.child("kind"), "expected \"synthetic\" or \"sidecar\", got \"" + b.kind + "\"");
    }
    r.finish();
    return b;
}

EvalLmConfig parse_eval_lm(const json & j, const std::string & path) {
    ObjectReader r(j, path);
    EvalLmConfig e;
    r.req("kind", e.kind);
    if (e.kind == "smoothed") {
        r.opt("mix", e.mix);
        if (!(e.mix > 0.0 && e.mix <= 1.0)) {
            throw ConfigError(r.child("mix"), "must lie in (0, 1]");
        }
    } else if (e.kind == "fixture") {
        r.req("fixture", e.fixture);
    } else if (e.kind == "sidecar") {
        r.req("url", e.url);
    } else if (e.kind != "search" && e.kind != "uniform" && e.kind != "none") {
        throw ConfigError(r.child("kind"), "unknown evaluation LM kind \"" + e.kind + "\"");
    }
    r.finish();
    return e;
}

json eval_lm_json(const EvalLmConfig & e) {
    json j{{"kind", e.kind}};
    if (e.kind == "smoothed") {
        j["mix"] = e.mix;
    } else if (e.kind == "fixture") {
        j["fixture"] = e.fixture;
    } else if (e.kind == "sidecar") {
        j["url"] = e.url;
    }
    return j;
}

std::shared_ptr<const LanguageModel> remote_lm(const std::string & url, const BackendConfig & b) {
    auto options = b.client;
    if (!b.bearer_token_env.empty()) {
        if (const char * tok = std::getenv(b.bearer_token_env.c_str())) {
            options.bearer_token = tok;
        }
    }
    return std::make_shared<sidecar::RemoteLanguageModel>(
        sidecar::SidecarEndpoint::connect(url.empty() ? sidecar::default_base_url() : url, options));
}

std::vector<PromptRecord> read_prompts(const fs::path & run_dir) {
    const fs::path path = run_dir / kPromptsFile;
    if (!fs::is_regular_file(path)) {
        throw ConfigError(path.string(), "no prompts; run the search first");
    }
    std::vector<PromptRecord> out;
    for (const auto & j : read_jsonl_resumable(path)) {
        out.push_back(prompt_record_from_json(j));
    }
    return out;
}

std::vector<eval::PromptEval> read_evals(const fs::path & run_dir) {
    const fs::path path = run_dir / kEvalFile;
    if (!fs::is_regular_file(path)) {
        throw ConfigError(path.string(), "no evaluation; run eval first");
    }
    std::vector<eval::PromptEval> out;
    for (const auto & j : read_jsonl_resumable(path)) {
        out.push_back(eval::prompt_eval_from_json(j));
    }
    return out;
}

std::string shortest(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return ec == std::errc{} ? std::string(buf, end) : std::to_string(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    std::error_code ec;
    for (const auto & entry : fs::directory_iterator(data_dir() / "presets", ec)) {
        if (entry.path().extension() == ".json") {
            names.push_back(entry.path().stem().string());
        }
    }
    std::sort(names.begin(), names.end());
    return names;
}

PromptTemplate load_preset(const std::string & name, const AttributeSpec & attribute) {
    const fs::path path = data_dir() / "presets" / (name + ".json");
    if (name.empty() || name.find('/') != std::string::npos || !fs::is_regular_file(path)) {
        throw ConfigError("template.preset", "unknown preset \"" + name + "\"");
    }
    PromptTemplate t = template_from_json(read_json_file(path), path.string());
    const std::string placeholder = "{target}";
    for (std::size_t pos; (pos = t.user_prompt.find(placeholder)) != std::string::npos;) {
        t.user_prompt.replace(pos, placeholder.size(), attribute.target_name());
    }
    return t;
}

std::vector<std::string> load_lexicon(const std::string & name) {
    const fs::path path = data_dir() / "lexicons" / (name + ".json");
    if (name.empty() || name.find('/') != std::string::npos || !fs::is_regular_file(path)) {
        throw ConfigError("eval.lexicon", "unknown lexicon \"" + name + "\"");
    }
    return ObjectReader::convert<std::vector<std::string>>(read_json_file(path), path.string());
}

RunConfig parse_run_config(const json & j) {
    ObjectReader r(j, "");
    RunConfig c;

    const auto * attr = r.get("attribute");
    if (attr == nullptr) {
        throw ConfigError("attribute", "missing required field");
    }
    c.attribute = attribute_from_json(*attr, "attribute");

    if (const auto * s = r.get("search")) {
        c.search = search_config_from_json(*s, "search");
    }

    if (const auto * t = r.get("template")) {
        if (t->is_object() && t->contains("preset")) {
            ObjectReader tr(*t, "template");
            std::string preset;
            tr.req("preset", preset);
            c.prompt_template = load_preset(preset, c.attribute);
            // explicit texts next to a preset override it field by field
            tr.opt("system_prompt", c.prompt_template.system_prompt);
            tr.opt("user_prompt", c.prompt_template.user_prompt);
            tr.opt("model_prefix", c.prompt_template.model_prefix);
            tr.finish();
        } else {
            c.prompt_template = template_from_json(*t, "template");
        }
    }

    const auto * backend = r.get("backend");
    if (backend == nullptr) {
        throw ConfigError("backend", "missing required field");
    }
    c.backend = parse_backend(*backend, "backend");
    if (c.backend.kind == "sidecar") {
        try {
            c.backend.generation.validate(c.search.t_prime);
        } catch (const InvalidArgument & e) {
            throw ConfigError("backend.generation.steps", e.what());
        }
    }

    bool lexicon_set = false;
    if (const auto * e = r.get("eval")) {
        ObjectReader er(*e, "eval");
        er.opt("images_per_prompt", c.eval.images_per_prompt);
        er.opt("seed", c.eval.seed);
        er.opt("parallelism", c.eval.parallelism);
        if (const auto * lm = er.get("eval_lm")) {
            c.eval.eval_lm = parse_eval_lm(*lm, "eval.eval_lm");
        }
        if (const auto * lex = er.get("lexicon")) {
            lexicon_set = true;
            if (lex->is_string()) {
                c.eval.lexicon = load_lexicon(lex->get<std::string>());
            } else {
                c.eval.lexicon = ObjectReader::convert<std::vector<std::string>>(*lex, "eval.lexicon");
            }
        }
        er.finish();
        if (c.eval.images_per_prompt < 1) {
            throw ConfigError("eval.images_per_prompt", "must be >= 1");
        }
        if (c.eval.parallelism < 1) {
            throw ConfigError("eval.parallelism", "must be >= 1");
        }
    }
    if (!lexicon_set && fs::is_regular_file(data_dir() / "lexicons" / (c.attribute.attribute_name + ".json"))) {
        c.eval.lexicon = load_lexicon(c.attribute.attribute_name);
    }
    if (c.backend.kind == "sidecar" &&
        (c.eval.eval_lm.kind == "uniform" || c.eval.eval_lm.kind == "smoothed")) {
        throw ConfigError("eval.eval_lm.kind", "\"" + c.eval.eval_lm.kind + "\" needs the synthetic backend");
    }

    r.opt("num_prompts", c.num_prompts);
    if (c.num_prompts < 1) {
        throw ConfigError("num_prompts", "must be >= 1");
    }
    r.opt("output_dir", c.output_dir);
    if (c.output_dir.empty()) {
        throw ConfigError("output_dir", "must be non-empty");
    }
    r.finish();
    return c;
}

RunConfig load_run_config(const fs::path & path) { return parse_run_config(read_json_file(path)); }

void apply_overrides(RunConfig & cfg, const Overrides & o) {
    if (o.seed) {
        cfg.search.seed = *o.seed;
        cfg.eval.seed = *o.seed;
    }
    if (o.parallelism) {
        if (*o.parallelism < 1) {
            throw ConfigError("--parallelism", "must be >= 1");
        }
        cfg.search.parallelism = *o.parallelism;
        cfg.eval.parallelism = *o.parallelism;
    }
    if (o.sidecar_url) {
        cfg.backend.url = *o.sidecar_url;
    }
    if (o.out) {
        cfg.output_dir = *o.out;
    }
}

json to_json(const RunConfig & c) {
    json backend{{"kind", c.backend.kind}};
    if (c.backend.kind == "synthetic") {
        backend["fixture"] = c.backend.fixture;
        backend["no_face_rate"] = c.backend.no_face_rate;
    } else {
        backend["url"] = c.backend.url;
        backend["bearer_token_env"] = c.backend.bearer_token_env;
        backend["timeout_ms"] = c.backend.client.timeout_ms;
        backend["max_retries"] = c.backend.client.max_retries;
        backend["backoff_ms"] = c.backend.client.backoff_ms;
        backend["max_in_flight"] = c.backend.client.max_in_flight;
        backend["cache"] = c.backend.client.cache;
        backend["generation"] = json{{"steps", c.backend.generation.steps},
                                     {"guidance", c.backend.generation.guidance},
                                     {"scheduler", c.backend.generation.scheduler},
                                     {"width", c.backend.generation.width},
                                     {"height", c.backend.generation.height}};
    }
    return json{{"search", bgps::to_json(c.search)},
                {"attribute", bgps::to_json(c.attribute)},
                {"template", bgps::to_json(c.prompt_template)},
                {"backend", std::move(backend)},
                {"eval",
                 {{"images_per_prompt", c.eval.images_per_prompt},
                  {"seed", c.eval.seed},
                  {"parallelism", c.eval.parallelism},
                  {"eval_lm", eval_lm_json(c.eval.eval_lm)},
                  {"lexicon", c.eval.lexicon}}},
                {"num_prompts", c.num_prompts},
                {"output_dir", c.output_dir}};
}

// ---------------------------------------------------------------------------
// backends

Backend make_backend(const RunConfig & cfg) {
    Backend b;
    if (cfg.backend.kind == "synthetic") {
        synth::Fixture f = [&] {
            try {
                return resolve_fixture(cfg.backend.fixture);
            } catch (const UnknownFixture & e) {
                throw ConfigError("backend.fixture", e.what());
            }
        }();
        if ((!f.scorer.attribute_name().empty() && f.scorer.attribute_name() != cfg.attribute.attribute_name) ||
            static_cast<int>(cfg.attribute.class_names.size()) != f.scorer.class_count()) {
            throw ConfigError("attribute", "fixture \"" + f.name + "\" models attribute \"" +
                                               f.attribute.attribute_name + "\" with " +
                                               std::to_string(f.scorer.class_count()) + " classes");
        }
        auto lm = std::make_shared<synth::ToyLM>(f.lm);
        if (!cfg.prompt_template.model_prefix.empty()) {
            try {
                (void)lm->tokenize(cfg.prompt_template.model_prefix);
            } catch (const UnknownToken & e) {
                throw ConfigError("template.model_prefix",
                                  std::string("does not tokenize under the search LM: ") + e.what());
            }
        }
        b.lm = lm;
        b.scorer = std::make_shared<synth::ToyBiasScorer>(f.scorer);
        b.labeler = std::make_shared<synth::ToyImageLabeler>(f.scorer, cfg.backend.no_face_rate);

        const auto & e = cfg.eval.eval_lm;
        if (e.kind == "search") {
            b.eval_lm = lm;
        } else if (e.kind == "uniform") {
            synth::ToyLM::Table table{{{}, std::vector<double>(lm->vocab_size(), 1.0 / static_cast<double>(
                                                                                     lm->vocab_size()))}};
            b.eval_lm = std::make_shared<synth::ToyLM>(lm->vocab(), lm->vocab().at(lm->eos_id()), 1,
                                                       std::move(table), "toy-uniform");
        } else if (e.kind == "smoothed") {
            b.eval_lm = std::make_shared<synth::ToyLM>(synth::ToyLM::smoothed(*lm, e.mix));
        }
    } else {
        auto options = cfg.backend.client;
        if (!cfg.backend.bearer_token_env.empty()) {
            if (const char * tok = std::getenv(cfg.backend.bearer_token_env.c_str())) {
                options.bearer_token = tok;
            }
        }
        auto endpoint = sidecar::SidecarEndpoint::connect(
            cfg.backend.url.empty() ? sidecar::default_base_url() : cfg.backend.url, options);
        auto lm = std::make_shared<sidecar::RemoteLanguageModel>(endpoint);
        b.lm = lm;
        b.scorer = std::make_shared<sidecar::RemoteBiasScorer>(endpoint);
        if (endpoint.has(sidecar::capability::generate) && endpoint.has(sidecar::capability::classify)) {
            b.labeler = std::make_shared<sidecar::RemoteImageLabeler>(endpoint, cfg.backend.generation);
        }
        if (cfg.eval.eval_lm.kind == "search") {
            b.eval_lm = lm;
        }
    }
    const auto & e = cfg.eval.eval_lm;
    if (e.kind == "fixture") {
        try {
            b.eval_lm = std::make_shared<synth::ToyLM>(resolve_fixture(e.fixture).lm);
        } catch (const UnknownFixture & ex) {
            throw ConfigError("eval.eval_lm.fixture", ex.what());
        }
    } else if (e.kind == "sidecar") {
        b.eval_lm = remote_lm(e.url, cfg.backend);
    }
    return b;
}

// ---------------------------------------------------------------------------
// run persistence

json to_json(const PromptRecord & r) {
    return json{{"index", r.index},
                {"seed", r.seed},
                {"prompt", r.prompt},
                {"token_ids", r.token_ids},
                {"lm_logprob", encode_logprob(r.lm_logprob)},
                {"cls_logprob", encode_logprob(r.cls_logprob)},
                {"joint", encode_logprob(r.joint)},
                {"finished", r.finished},
                {"degenerate", r.degenerate}};
}

PromptRecord prompt_record_from_json(const json & j) {
    PromptRecord r;
    try {
        r.index = j.at("index").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.prompt = j.at("prompt").get<std::string>();
        r.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
        r.lm_logprob = decode_logprob(j.at("lm_logprob"), "lm_logprob");
        r.cls_logprob = decode_logprob(j.at("cls_logprob"), "cls_logprob");
        r.joint = decode_logprob(j.at("joint"), "joint");
        r.finished = j.at("finished").get<bool>();
        r.degenerate = j.value("degenerate", false);
    } catch (const json::exception & e) {
        throw Error(std::string("malformed prompt record: ") + e.what());
    }
    return r;
}

std::vector<json> read_jsonl_resumable(const fs::path & path) {
    std::vector<json> out;
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
        return out;
    }
    std::string content;
    {
        std::ifstream in(path, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        content = ss.str();
    }
    const auto last_newline = content.rfind('\n');
    const std::size_t complete = last_newline == std::string::npos ? 0 : last_newline + 1;
    std::size_t start = 0;
    while (start < complete) {
        const auto end = content.find('\n', start);
        const std::string line = content.substr(start, end - start);
        if (!line.empty()) {
            try {
                out.push_back(json::parse(line));
            } catch (const json::parse_error & e) {
                throw Error(path.string() + ": corrupt line " + std::to_string(out.size() + 1) + ": " + e.what());
            }
        }
        start = end + 1;
    }
    if (complete < content.size()) {
        fs::resize_file(path, complete);
    }
    return out;
}

std::uint64_t prompt_search_seed(std::uint64_t seed, int index) {
    return derive_seed(seed, static_cast<std::uint64_t>(index));
}

// ---------------------------------------------------------------------------
// commands

fs::path cmd_search(const RunConfig & cfg) {
    const fs::path out = cfg.output_dir;
    fs::create_directories(out / "runs");

    const fs::path config_path = out / kConfigFile;
    if (fs::is_regular_file(config_path)) {
        const RunConfig previous = load_run_config(config_path);
        if (comparable(previous) != comparable(cfg)) {
            throw ConfigError("output_dir", out.string() + " holds a run with a different config");
        }
    }
    write_file(config_path, to_json(cfg).dump(2) + "\n");

    const Backend backend = make_backend(cfg);
    const fs::path prompts_path = out / kPromptsFile;
    const auto existing = read_jsonl_resumable(prompts_path);
    for (std::size_t i = 0; i < existing.size(); ++i) {
        if (prompt_record_from_json(existing[i]).index != static_cast<int>(i)) {
            throw Error(prompts_path.string() + ": records out of order at line " + std::to_string(i + 1));
        }
    }
    const auto done = static_cast<int>(existing.size());
    if (done >= cfg.num_prompts) {
        return out;
    }

    const int remaining = cfg.num_prompts - done;
    const bool parallel_runs = backend.lm->concurrent_safe() && backend.scorer->concurrent_safe();
    const int workers = parallel_runs ? std::min(cfg.search.parallelism, remaining) : 1;

    JsonlAppender prompts(prompts_path);
    std::vector<PromptRecord> records(static_cast<std::size_t>(remaining));

    auto work = [&](std::size_t k) {
        const int index = done + static_cast<int>(k);
        SearchConfig sc = cfg.search;
        sc.seed = prompt_search_seed(cfg.search.seed, index);
        if (workers > 1) {
            sc.parallelism = 1;
        }
        const fs::path run_dir = out / "runs" / run_dir_name(index);
        fs::create_directories(run_dir);

        auto write_ledger = [&](const SearchLedger & ledger) {
            std::string steps;
            for (const auto & s : ledger.steps) {
                steps += canonical_dump(bgps::to_json(s));
                steps += '\n';
            }
            json header = ledger_header(ledger);
            header["index"] = index;
            write_file(run_dir / "header.json", canonical_dump(header) + "\n");
            write_file(run_dir / "steps.jsonl", steps);
        };

        SearchResult result;
        try {
            result = run_search(sc, cfg.attribute, *backend.lm, *backend.scorer, cfg.prompt_template);
        } catch (const SearchAborted & e) {
            write_ledger(e.ledger());
            throw;
        }
        write_ledger(result.ledger);

        PromptRecord & r = records[k];
        r.index = index;
        r.seed = sc.seed;
        r.prompt = scored_prompt_text(*backend.lm, cfg.prompt_template, result.best.seq.token_ids);
        r.token_ids = result.best.seq.token_ids;
        r.lm_logprob = result.best.lm_logprob;
        r.cls_logprob = result.best.cls_logprob;
        r.joint = result.best.joint_score;
        r.finished = result.best.finished;
        r.degenerate = result.ledger.degenerate;
    };
    auto commit = [&](std::size_t k) { prompts.append(to_json(records[k])); };
    ordered_parallel(static_cast<std::size_t>(remaining), workers, work, commit);
    return out;
}

fs::path cmd_search(const fs::path & config_path, const Overrides & o) {
    RunConfig cfg = load_run_config(config_path);
    apply_overrides(cfg, o);
    return cmd_search(cfg);
}

eval::EvalReport cmd_eval(const fs::path & run_dir, const Overrides & o) {
    RunConfig cfg = load_run_config(run_dir / kConfigFile);
    Overrides eval_only = o;
    eval_only.out.reset();
    apply_overrides(cfg, eval_only);
    if (o.seed) {
        cfg.search.seed = load_run_config(run_dir / kConfigFile).search.seed;
    }

    const auto records = read_prompts(run_dir);
    const Backend backend = make_backend(cfg);
    if (!backend.labeler) {
        throw Error("the sidecar does not advertise generate and classify");
    }
    eval::EvalSettings settings;
    settings.images_per_prompt = cfg.eval.images_per_prompt;
    settings.seed = cfg.eval.seed;
    settings.lexicon = cfg.eval.lexicon;
    settings.parallelism = cfg.eval.parallelism;

    const fs::path eval_path = run_dir / kEvalFile;
    std::vector<eval::PromptEval> evals;
    for (const auto & j : read_jsonl_resumable(eval_path)) {
        evals.push_back(eval::prompt_eval_from_json(j));
    }
    if (evals.size() > records.size()) {
        throw Error(eval_path.string() + " has more entries than prompts.jsonl");
    }
    for (std::size_t i = 0; i < evals.size(); ++i) {
        if (evals[i].prompt != records[i].prompt) {
            throw Error(eval_path.string() + ": entry " + std::to_string(i) + " does not match prompts.jsonl");
        }
    }

    const std::size_t start = evals.size();
    evals.resize(records.size());
    const bool parallel_ok =
        backend.labeler->concurrent_safe() && (!backend.eval_lm || backend.eval_lm->concurrent_safe());
    JsonlAppender out(eval_path);
    ordered_parallel(
        records.size() - start, parallel_ok ? settings.parallelism : 1,
        [&](std::size_t k) {
            evals[start + k] = eval::evaluate_prompt(records[start + k].prompt, *backend.labeler,
                                                     backend.eval_lm.get(), cfg.attribute, settings);
        },
        [&](std::size_t k) { out.append(eval::to_json(evals[start + k])); });

    eval::EvalReport report = eval::aggregate(std::move(evals), cfg.attribute, settings.lexicon);
    write_file(run_dir / "report.csv", eval::report_csv(report));
    const std::string experiment = "lambda=" + format_lambda(cfg.search.lambda) + ", target=" +
                                   cfg.attribute.target_name();
    write_file(run_dir / "report.md", eval::report_markdown(report, experiment));
    return report;
}

json cmd_analyze(const fs::path & run_dir, const std::optional<fs::path> & baseline_dir,
                 const AnalyzeOptions & options) {
    const RunConfig cfg = load_run_config(run_dir / kConfigFile);
    const std::size_t target = cfg.attribute.target_class;

    auto proportions = [&](const std::vector<eval::PromptEval> & evals) {
        std::vector<double> out;
        for (const auto & e : evals) {
            if (e.ok()) {
                out.push_back(e.group_freq.at(target));
            }
        }
        return out;
    };
    auto prompt_texts = [](const std::vector<PromptRecord> & recs) {
        std::vector<std::string> out;
        for (const auto & r : recs) {
            out.push_back(r.prompt);
        }
        return out;
    };

    const auto evals = read_evals(run_dir);
    std::vector<analysis::PromptScore> scores;
    for (const auto & e : evals) {
        if (e.ok()) {
            scores.push_back({e.prompt, e.group_freq.at(target)});
        }
    }
    const auto run_prompts = prompt_texts(read_prompts(run_dir));

    analysis::WordCounts base_counts;
    std::optional<std::vector<double>> base_props;
    if (baseline_dir) {
        base_counts = analysis::word_frequencies(prompt_texts(read_prompts(*baseline_dir)));
        if (fs::is_regular_file(*baseline_dir / kEvalFile)) {
            base_props = proportions(read_evals(*baseline_dir));
        }
    }
    const auto run_counts = analysis::word_frequencies(run_prompts);
    const auto categories = analysis::categorize_words(base_counts, run_counts);
    const auto stats = analysis::word_bias_stats(scores, base_counts);
    const auto cloud = analysis::export_wordcloud_data(stats, options.top_n, options.min_frequency);

    const auto run_props = proportions(evals);
    const auto run_hist = analysis::proportion_histogram(run_props, options.bins);
    std::vector<std::size_t> base_hist;
    if (base_props) {
        base_hist = analysis::proportion_histogram(*base_props, options.bins);
    }

    json cats = json::object();
    for (const auto & [w, c] : categories) {
        cats[w] = analysis::to_string(c);
    }
    json summary = json::object();
    for (const auto & [c, n] : analysis::category_summary(categories)) {
        summary[std::string(analysis::to_string(c))] = n;
    }
    json words = json::array();
    for (const auto & s : stats) {
        words.push_back(analysis::to_json(s));
    }
    std::vector<double> edges;
    for (int b = 0; b <= options.bins; ++b) {
        edges.push_back(static_cast<double>(b) / options.bins);
    }
    json four_way = summary;
    four_way.erase("unchanged");
    json result{{"target_class", cfg.attribute.target_name()},
                {"baseline", baseline_dir ? json(baseline_dir->string()) : json(nullptr)},
                {"categories", std::move(cats)},
                {"categories_summary", std::move(summary)},
                {"four_way_summary", std::move(four_way)},
                {"stats", std::move(words)},
                {"histogram",
                 {{"bins", options.bins},
                  {"edges", edges},
                  {"counts", run_hist},
                  {"baseline_counts", base_props ? json(base_hist) : json(nullptr)}}}};

    write_file(run_dir / "analysis.json", result.dump(2) + "\n");
    write_file(run_dir / "wordcloud.csv", analysis::wordcloud_csv(cloud));
    std::ostringstream hist;
    hist.precision(17);
    hist << "bin_low,bin_high,run,baseline\r\n";
    for (int b = 0; b < options.bins; ++b) {
        hist << edges[static_cast<std::size_t>(b)] << ',' << edges[static_cast<std::size_t>(b) + 1] << ','
             << run_hist[static_cast<std::size_t>(b)] << ',';
        if (base_props) {
            hist << base_hist[static_cast<std::size_t>(b)];
        }
        hist << "\r\n";
    }
    write_file(run_dir / "histogram.csv", hist.str());
    return result;
}

std::string format_lambda(double lambda) { return shortest(lambda); }

std::vector<TradeoffRow> cmd_sweep(const RunConfig & cfg, const std::vector<double> & lambdas) {
    if (lambdas.empty()) {
        throw ConfigError("--lambda", "the sweep needs at least one value");
    }
    for (double l : lambdas) {
        if (!(std::isfinite(l) && l >= 0.0)) {
            throw ConfigError("--lambda", "values must be finite and >= 0");
        }
    }
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);

    std::vector<TradeoffRow> rows;
    for (double l : lambdas) {
        RunConfig c = cfg;
        c.search.lambda = l;
        c.output_dir = (out / ("lambda_" + format_lambda(l))).string();
        const fs::path dir = cmd_search(c);
        const eval::EvalReport report = cmd_eval(dir);

        TradeoffRow row;
        row.lambda = l;
        std::vector<double> props;
        for (const auto & e : report.per_prompt) {
            if (e.ok()) {
                props.push_back(e.group_freq.at(c.attribute.target_class));
            }
        }
        row.target_proportion = eval::ci95(props);
        row.perplexity = report.ppl;
        std::vector<double> probs;
        for (const auto & r : read_prompts(dir)) {
            probs.push_back(std::exp(r.cls_logprob));
        }
        row.mean_target_prob = mean_of(probs);
        rows.push_back(row);
    }

    std::ostringstream csv;
    csv.precision(17);
    csv << "lambda,mean_target_proportion,target_proportion_ci95,mean_ppl,ppl_ci95,mean_target_prob\r\n";
    for (const auto & r : rows) {
        csv << format_lambda(r.lambda) << ',' << r.target_proportion.mean << ',' << r.target_proportion.halfwidth
            << ',';
        if (r.perplexity.n > 0) {
            csv << r.perplexity.mean << ',' << r.perplexity.halfwidth;
        } else {
            csv << ',';
        }
        csv << ',' << r.mean_target_prob << "\r\n";
    }
    write_file(out / "tradeoff.csv", csv.str());
    return rows;
}

std::vector<TradeoffRow> cmd_sweep(const fs::path & config_path, const std::vector<double> & lambdas,
                                   const Overrides & o) {
    RunConfig cfg = load_run_config(config_path);
    apply_overrides(cfg, o);
    return cmd_sweep(cfg, lambdas);
}

std::vector<OracleCheck> cmd_oracle_check(const std::string & fixture,
                                          const std::optional<std::string> & freeze_commit) {
    const std::vector<std::string> names = fixture == "all" ? synth::fixture_names()
                                                            : std::vector<std::string>{fixture};
    if (names.empty()) {
        throw UnknownFixture("no fixtures under " + (data_dir() / "fixtures").string());
    }
    std::vector<OracleCheck> checks;
    for (const auto & name : names) {
        synth::Fixture f = resolve_fixture(name);
        OracleCheck check;
        check.fixture = f.name;
        const auto t0 = std::chrono::steady_clock::now();
        const SearchConfig cfg = synth::exhaustive_config(f);
        const SearchResult search = run_search(cfg, f.attribute, f.lm, f.scorer, PromptTemplate{});
        const synth::OracleResult oracle = synth::brute_force_argmax(f.lm, f.scorer, f.attribute, f.search);
        check.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        const auto text_of = [&](const std::vector<TokenId> & ids) {
            return scored_prompt_text(f.lm, PromptTemplate{}, ids);
        };
        const auto & got = search.best;
        const auto & want = oracle.best;
        if (got.seq.token_ids != want.seq.token_ids) {
            check.diffs.push_back("search returned \"" + text_of(got.seq.token_ids) + "\", brute force \"" +
                                  text_of(want.seq.token_ids) + "\"");
        }
        if (!(std::abs(got.joint_score - want.joint_score) <= 1e-12)) {
            check.diffs.push_back("J: search " + shortest(got.joint_score) + ", brute force " +
                                  shortest(want.joint_score));
        }
        const bool live_ok = check.diffs.empty();

        if (freeze_commit && live_ok) {
            f.expected = synth::FixtureExpectation{text_of(want.seq.token_ids), want.seq.token_ids,
                                                   want.joint_score, *freeze_commit};
            write_file(fixture_path(name), synth::fixture_to_json(f).dump(2) + "\n");
        }
        if (!f.expected) {
            check.diffs.push_back("no frozen expectation");
        } else {
            const auto & e = *f.expected;
            if (e.text != text_of(want.seq.token_ids)) {
                check.diffs.push_back("expected text \"" + e.text + "\", got \"" + text_of(want.seq.token_ids) +
                                      "\"");
            }
            if (!e.token_ids.empty() && e.token_ids != want.seq.token_ids) {
                check.diffs.push_back("expected token ids differ");
            }
            if (!(std::abs(e.joint - want.joint_score) <= 1e-12)) {
                check.diffs.push_back("expected J " + shortest(e.joint) + ", got " + shortest(want.joint_score));
            }
        }
        check.passed = check.diffs.empty();
        checks.push_back(std::move(check));
    }
    return checks;
}

}  // namespace bgps::cli
