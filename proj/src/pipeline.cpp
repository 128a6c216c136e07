#include "credence/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <utility>

#include <json.hpp>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace credence {

void Fnv1a64::update(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= bytes[i];
    state *= 1099511628211ull;
  }
}

namespace {

constexpr char kCheckpointMagic[] = "credence-checkpoint 1\n";
constexpr char kVectorMagic[] = "credence-vectors 1\n";

std::string u64_le(std::uint64_t v) {
  std::string out(8, '\0');
  for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  return out;
}

std::uint64_t parse_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

// Streams float data as little-endian bytes, updating the running hash.
void write_floats(std::ofstream& out, Fnv1a64& hash,
                  const std::vector<float>& values) {
  std::string buf;
  buf.reserve(4 * 16384);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    buf.push_back(static_cast<char>(bits & 0xff));
    buf.push_back(static_cast<char>((bits >> 8) & 0xff));
    buf.push_back(static_cast<char>((bits >> 16) & 0xff));
    buf.push_back(static_cast<char>((bits >> 24) & 0xff));
    if (buf.size() == buf.capacity()) {
      hash.update(buf.data(), buf.size());
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      buf.clear();
    }
  }
  if (!buf.empty()) {
    hash.update(buf.data(), buf.size());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

std::vector<float> parse_floats(const char* bytes, std::int64_t count) {
  std::vector<float> values(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes + 4 * i);
    const std::uint32_t bits =
        static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
        (static_cast<std::uint32_t>(p[2]) << 16) |
        (static_cast<std::uint32_t>(p[3]) << 24);
    values[static_cast<std::size_t>(i)] = std::bit_cast<float>(bits);
  }
  return values;
}

// One named-tensor file: magic, header length, JSON header, float payload,
// trailing FNV-1a fingerprint over header + payload.
void write_envelope(const std::string& path, const char* magic,
                    const std::string& header_json,
                    const std::vector<const std::vector<float>*>& blocks) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(magic, static_cast<std::streamsize>(std::strlen(magic)));
  const std::string len = u64_le(header_json.size());
  out.write(len.data(), 8);
  out.write(header_json.data(),
            static_cast<std::streamsize>(header_json.size()));
  Fnv1a64 hash;
  hash.update(header_json.data(), header_json.size());
  for (const auto* block : blocks) write_floats(out, hash, *block);
  const std::string tail = u64_le(hash.digest());
  out.write(tail.data(), 8);
  if (!out) throw std::runtime_error("write failed for " + path);
}

struct Envelope {
  std::string header_json;
  std::string payload;  // raw little-endian float bytes
  std::uint64_t stored_fingerprint = 0;
  std::uint64_t computed_fingerprint = 0;
};

Envelope read_envelope(const std::string& path, const char* magic,
                       const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(what + ": cannot open " + path);
  std::string file((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  const std::size_t magic_len = std::strlen(magic);
  if (file.size() < magic_len || file.compare(0, magic_len, magic) != 0)
    throw std::runtime_error(what + ": bad magic in " + path);
  if (file.size() < magic_len + 8)
    throw std::runtime_error(what + ": corrupt header (missing length)");
  const std::uint64_t header_len = parse_u64_le(
      reinterpret_cast<const unsigned char*>(file.data() + magic_len));
  const std::size_t header_start = magic_len + 8;
  if (header_len > file.size() - header_start)
    throw std::runtime_error(what +
                             ": corrupt header (length exceeds file size)");
  const std::size_t payload_start = header_start + header_len;
  if (file.size() < payload_start + 8)
    throw std::runtime_error(what + ": truncated payload (no fingerprint)");

  Envelope env;
  env.header_json = file.substr(header_start, header_len);
  env.payload = file.substr(payload_start, file.size() - payload_start - 8);
  env.stored_fingerprint = parse_u64_le(reinterpret_cast<const unsigned char*>(
      file.data() + file.size() - 8));
  Fnv1a64 hash;
  hash.update(env.header_json.data(), env.header_json.size());
  hash.update(env.payload.data(), env.payload.size());
  env.computed_fingerprint = hash.digest();
  return env;
}

// Validates the manifest against the payload: field presence, count/shape
// agreement, contiguous offsets, exact payload size, fingerprint.
CheckpointSummary summarize(const Envelope& env, const std::string& what) {
  ordered_json header;
  try {
    header = ordered_json::parse(env.header_json);
  } catch (const std::exception& e) {
    throw std::runtime_error(what + ": corrupt header (" +
                             std::string(e.what()) + ")");
  }
  if (!header.is_object() || !header.contains("kind") ||
      !header.contains("config") || !header.contains("params") ||
      !header["params"].is_array())
    throw std::runtime_error(what + ": corrupt header (missing fields)");

  CheckpointSummary summary;
  summary.kind = header["kind"].get<std::string>();
  summary.config_json = header["config"].dump();
  std::int64_t expected_offset = 0;
  for (const auto& p : header["params"]) {
    if (!p.contains("name") || !p.contains("shape") || !p.contains("count") ||
        !p.contains("offset"))
      throw std::runtime_error(what + ": corrupt header (missing fields)");
    CheckpointEntry entry;
    entry.name = p["name"].get<std::string>();
    entry.shape = p["shape"].get<Shape>();
    entry.count = p["count"].get<std::int64_t>();
    entry.offset = p["offset"].get<std::int64_t>();
    if (entry.count != numel(entry.shape))
      throw std::runtime_error(what + ": corrupt header (count/shape mismatch for " +
                               entry.name + ")");
    if (entry.offset != expected_offset)
      throw std::runtime_error(what + ": offset overlap or gap at " +
                               entry.name);
    expected_offset += entry.count * 4;
    summary.total_params += entry.count;
    summary.entries.push_back(std::move(entry));
  }
  const auto payload_size = static_cast<std::int64_t>(env.payload.size());
  if (payload_size < expected_offset)
    throw std::runtime_error(
        what + ": truncated payload (expected " +
        std::to_string(expected_offset) + " bytes, found " +
        std::to_string(payload_size) + ")");
  if (payload_size > expected_offset)
    throw std::runtime_error(what + ": oversized payload");
  if (env.stored_fingerprint != env.computed_fingerprint)
    throw std::runtime_error(what + ": fingerprint mismatch");
  summary.fingerprint = env.stored_fingerprint;
  return summary;
}

ordered_json manifest_for(const ParameterMap& params) {
  ordered_json list = ordered_json::array();
  std::int64_t offset = 0;
  for (const auto& p : params) {
    ordered_json entry;
    entry["name"] = p.name;
    entry["shape"] = p.tensor.shape();
    entry["count"] = p.tensor.size();
    entry["offset"] = offset;
    offset += p.tensor.size() * 4;
    list.push_back(std::move(entry));
  }
  return list;
}

ordered_json encoder_config_json(const EncoderConfig& cfg,
                                 std::uint64_t seed) {
  ordered_json j;
  j["preset"] = cfg.preset;
  j["num_layers"] = cfg.num_layers;
  j["hidden_size"] = cfg.hidden_size;
  j["num_heads"] = cfg.num_heads;
  j["feedforward_size"] = cfg.feedforward_size;
  j["vocab_size"] = cfg.vocab_size;
  j["max_positions"] = cfg.max_positions;
  j["dropout_p"] = cfg.dropout_p;
  j["seed"] = seed;
  return j;
}

// The recipe is the pipeline's reuse key: the exact settings that produced
// the artifact. Empty string means none recorded.
void save_encoder_checkpoint_with_recipe(const EncoderModel& model,
                                         std::uint64_t seed,
                                         const std::string& recipe,
                                         const std::string& path) {
  ordered_json header;
  header["kind"] = "encoder";
  ordered_json config = encoder_config_json(model.config(), seed);
  if (!recipe.empty()) config["recipe"] = ordered_json::parse(recipe);
  header["config"] = std::move(config);
  header["params"] = manifest_for(model.parameters());
  std::vector<const std::vector<float>*> blocks;
  for (const auto& p : model.parameters()) blocks.push_back(&p.tensor.data());
  write_envelope(path, kCheckpointMagic, header.dump(), blocks);
}

void save_head_checkpoint_with_recipe(ClassifierHead& head, int input_width,
                                      const std::string& recipe,
                                      std::uint64_t encoder_fingerprint,
                                      const std::string& path) {
  ordered_json header;
  header["kind"] = "head";
  ordered_json config;
  config["variant"] = head.kind();
  config["input_width"] = input_width;
  if (!recipe.empty()) {
    config["recipe"] = ordered_json::parse(recipe);
    config["encoder_fingerprint"] = encoder_fingerprint;
  }
  header["config"] = std::move(config);
  header["params"] = manifest_for(head.parameters());
  std::vector<const std::vector<float>*> blocks;
  for (const auto& p : head.parameters()) blocks.push_back(&p.tensor.data());
  write_envelope(path, kCheckpointMagic, header.dump(), blocks);
}

}  // namespace

void save_encoder_checkpoint(const EncoderModel& model, std::uint64_t seed,
                             const std::string& path) {
  save_encoder_checkpoint_with_recipe(model, seed, "", path);
}

EncoderModel load_encoder_checkpoint(const std::string& path) {
  const Envelope env = read_envelope(path, kCheckpointMagic, "load_checkpoint");
  const CheckpointSummary summary = summarize(env, "load_checkpoint");
  if (summary.kind != "encoder")
    throw std::runtime_error("load_checkpoint: " + path +
                             " holds a " + summary.kind + ", not an encoder");
  const auto config = ordered_json::parse(summary.config_json);
  EncoderConfig cfg;
  cfg.preset = config.at("preset").get<std::string>();
  cfg.num_layers = config.at("num_layers").get<int>();
  cfg.hidden_size = config.at("hidden_size").get<int>();
  cfg.num_heads = config.at("num_heads").get<int>();
  cfg.feedforward_size = config.at("feedforward_size").get<int>();
  cfg.vocab_size = config.at("vocab_size").get<int>();
  cfg.max_positions = config.at("max_positions").get<int>();
  cfg.dropout_p = config.at("dropout_p").get<float>();

  WeightArchive archive;
  for (const auto& entry : summary.entries) {
    ArchiveEntry a;
    a.name = entry.name;
    a.shape = entry.shape;
    a.data = parse_floats(env.payload.data() + entry.offset, entry.count);
    archive.entries.push_back(std::move(a));
  }
  EncoderModel model(cfg, Rng(0));
  import_weights(model, archive);
  return model;
}

void save_head_checkpoint(ClassifierHead& head, int input_width,
                          const std::string& path) {
  save_head_checkpoint_with_recipe(head, input_width, "", 0, path);
}

ClassifierHead load_head_checkpoint(const std::string& path) {
  const Envelope env = read_envelope(path, kCheckpointMagic, "load_checkpoint");
  const CheckpointSummary summary = summarize(env, "load_checkpoint");
  if (summary.kind != "head")
    throw std::runtime_error("load_checkpoint: " + path + " holds a " +
                             summary.kind + ", not a head");
  const auto config = ordered_json::parse(summary.config_json);
  ClassifierHead head(config.at("variant").get<std::string>(),
                      config.at("input_width").get<int>(), Rng(0));

  ParameterMap& params = head.parameters();
  if (params.size() != summary.entries.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch for " +
                             path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = summary.entries[i];
    if (params[i].name != entry.name)
      throw std::runtime_error("load_checkpoint: unexpected parameter " +
                               entry.name);
    if (params[i].tensor.shape() != entry.shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for " +
                               entry.name);
    params[i].tensor.mutable_data() =
        parse_floats(env.payload.data() + entry.offset, entry.count);
  }
  return head;
}

CheckpointSummary verify_checkpoint(const std::string& path) {
  const Envelope env =
      read_envelope(path, kCheckpointMagic, "verify_checkpoint");
  return summarize(env, "verify_checkpoint");
}

std::uint64_t checkpoint_fingerprint(const std::string& path) {
  return verify_checkpoint(path).fingerprint;
}

void save_vector_cache(const VectorCacheFile& cache, const std::string& path) {
  if (cache.values.size() != cache.ids.size() * static_cast<std::size_t>(
                                                    cache.hidden))
    throw std::invalid_argument(
        "save_vector_cache: values size does not match count x hidden");
  ordered_json header;
  header["kind"] = "vectors";
  header["dataset"] = cache.dataset;
  header["encoder_fingerprint"] = cache.encoder_fingerprint;
  header["hidden"] = cache.hidden;
  header["count"] = cache.ids.size();
  header["ids"] = cache.ids;
  write_envelope(path, kVectorMagic, header.dump(), {&cache.values});
}

VectorCacheFile load_vector_cache(const std::string& path) {
  const Envelope env = read_envelope(path, kVectorMagic, "load_vector_cache");
  if (env.stored_fingerprint != env.computed_fingerprint)
    throw std::runtime_error("load_vector_cache: fingerprint mismatch");
  ordered_json header;
  try {
    header = ordered_json::parse(env.header_json);
  } catch (const std::exception& e) {
    throw std::runtime_error("load_vector_cache: corrupt header (" +
                             std::string(e.what()) + ")");
  }
  VectorCacheFile cache;
  cache.dataset = header.at("dataset").get<std::string>();
  cache.encoder_fingerprint = header.at("encoder_fingerprint").get<std::uint64_t>();
  cache.hidden = header.at("hidden").get<std::int64_t>();
  cache.ids = header.at("ids").get<std::vector<std::string>>();
  if (header.at("count").get<std::size_t>() != cache.ids.size())
    throw std::runtime_error("load_vector_cache: id index does not match count");
  const std::size_t expected_bytes = cache.ids.size() *
                                     static_cast<std::size_t>(cache.hidden) * 4;
  if (env.payload.size() != expected_bytes)
    throw std::runtime_error("load_vector_cache: truncated payload");
  cache.values = parse_floats(env.payload.data(),
                              static_cast<std::int64_t>(env.payload.size() / 4));
  return cache;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename Parser>
auto parse_number(const std::string& key, const std::string& value,
                  Parser parser) {
  try {
    return parser(value);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: invalid value \"" + value +
                                "\" for key " + key);
  }
}

int parse_int(const std::string& key, const std::string& value) {
  return parse_number(key, value, [](const std::string& v) { return std::stoi(v); });
}

float parse_float(const std::string& key, const std::string& value) {
  return parse_number(key, value, [](const std::string& v) { return std::stof(v); });
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  return parse_number(key, value,
                      [](const std::string& v) { return std::stoull(v); });
}

}  // namespace

void apply_config_entry(PipelineConfig& cfg, const std::string& entry) {
  const auto eq = entry.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config: expected key=value, got \"" + entry +
                                "\"");
  const std::string key = trim(entry.substr(0, eq));
  const std::string value = trim(entry.substr(eq + 1));
  if (key.empty())
    throw std::invalid_argument("config: empty key in \"" + entry + "\"");

  if (key == "dataset.path") cfg.dataset_path = value;
  else if (key == "dataset.adapter") cfg.dataset_adapter = value;
  else if (key == "dataset.scheme") cfg.scheme = LabelScheme::by_name(value);
  else if (key == "dataset.name") cfg.dataset_name = value;
  else if (key == "dataset.text_column") cfg.text_column = value;
  else if (key == "dataset.label_column") cfg.label_column = value;
  else if (key == "encoder.preset") cfg.preset = value;
  else if (key == "head") cfg.head = value;
  else if (key == "seed") { cfg.seed = parse_u64(key, value); cfg.seed_set = true; }
  else if (key == "out") cfg.out_dir = value;
  else if (key == "averaging") {
    if (value == "macro") cfg.averaging = Averaging::macro;
    else if (value == "positive-class") cfg.averaging = Averaging::positive_class;
    else throw std::invalid_argument("config: averaging must be macro or "
                                     "positive-class, got \"" + value + "\"");
  }
  else if (key == "finetune.lr") cfg.finetune.lr = parse_float(key, value);
  else if (key == "finetune.batch_size") cfg.finetune.batch_size = parse_int(key, value);
  else if (key == "finetune.epochs") cfg.finetune.epochs = parse_int(key, value);
  else if (key == "train.lr") cfg.train.lr = parse_float(key, value);
  else if (key == "train.batch_size") cfg.train.batch_size = parse_int(key, value);
  else if (key == "train.max_epochs") cfg.train.max_epochs = parse_int(key, value);
  else if (key == "train.patience") cfg.train.patience = parse_int(key, value);
  else if (key == "tokenizer.max_len") cfg.max_len = parse_int(key, value);
  else if (key == "tokenizer.vocab_target") cfg.vocab_target = parse_int(key, value);
  else if (key == "tokenizer.vocab_min_freq") cfg.vocab_min_freq = parse_int(key, value);
  else if (key == "benchmark.presets") cfg.benchmark_presets = split_list(value);
  else if (key == "benchmark.heads") cfg.benchmark_heads = split_list(value);
  else if (key == "benchmark.seeds") {
    cfg.benchmark_seeds.clear();
    for (const auto& item : split_list(value))
      cfg.benchmark_seeds.push_back(parse_u64(key, item));
  }
  else throw std::invalid_argument("config: unknown key \"" + key + "\"");
}

PipelineConfig parse_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  PipelineConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    try {
      apply_config_entry(cfg, text);
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " +
                                  e.what());
    }
  }
  return cfg;
}

void PipelineConfig::validate() const {
  if (!seed_set) throw std::invalid_argument("config: seed is required");
  if (dataset_path.empty())
    throw std::invalid_argument("config: dataset.path is required");
  static const std::vector<std::string> adapters = {
      "canonical-jsonl", "pheme-dir", "twitter-label-file", "covid-csv"};
  if (std::find(adapters.begin(), adapters.end(), dataset_adapter) ==
      adapters.end())
    throw std::invalid_argument("config: unknown adapter \"" +
                                dataset_adapter + "\"");
  EncoderConfig::from_preset(preset);  // throws for unknown presets
  const auto& variants = ClassifierHead::benchmark_variants();
  if (std::find(variants.begin(), variants.end(), head) == variants.end())
    throw std::invalid_argument("config: unknown head \"" + head + "\"");
  for (const auto& p : benchmark_presets) EncoderConfig::from_preset(p);
  for (const auto& h : benchmark_heads)
    if (std::find(variants.begin(), variants.end(), h) == variants.end())
      throw std::invalid_argument("config: unknown head \"" + h + "\"");
  if (max_len < 2) throw std::invalid_argument("config: tokenizer.max_len must be >= 2");
  if (out_dir.empty()) throw std::invalid_argument("config: out is required");
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::ingest: return "ingest";
    case Stage::split: return "split";
    case Stage::finetune: return "finetune";
    case Stage::encode: return "encode";
    case Stage::train_head: return "train-head";
    case Stage::eval: return "eval";
    case Stage::report: return "report";
  }
  return "unknown";
}

namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// Everything that must be unchanged for a finetuned checkpoint or trained
// head to be reusable.
ordered_json recipe_json(const PipelineConfig& cfg, const std::string& role) {
  ordered_json j;
  j["role"] = role;
  j["dataset"] = cfg.dataset_name.empty()
                     ? fs::path(cfg.dataset_path).stem().string()
                     : cfg.dataset_name;
  j["scheme"] = cfg.scheme.name;
  j["seed"] = cfg.seed;
  j["preset"] = cfg.preset;
  j["max_len"] = cfg.max_len;
  j["vocab_target"] = cfg.vocab_target;
  j["vocab_min_freq"] = cfg.vocab_min_freq;
  if (role == "finetuned" || role == "head") {
    j["finetune.lr"] = cfg.finetune.lr;
    j["finetune.batch_size"] = cfg.finetune.batch_size;
    j["finetune.epochs"] = cfg.finetune.epochs;
  }
  if (role == "head") {
    j["head"] = cfg.head;
    j["train.lr"] = cfg.train.lr;
    j["train.batch_size"] = cfg.train.batch_size;
    j["train.max_epochs"] = cfg.train.max_epochs;
    j["train.patience"] = cfg.train.patience;
  }
  return j;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, Stage through,
                            bool persist_head) {
  cfg.validate();
  PipelineResult res;

  // --- ingest ---
  Dataset ds;
  try {
    fs::create_directories(cfg.out_dir);
    LoadOptions opts;
    opts.scheme = cfg.scheme;
    opts.dataset_name = cfg.dataset_name;
    opts.text_column = cfg.text_column;
    opts.label_column = cfg.label_column;
    ds = load_dataset(cfg.dataset_path, cfg.dataset_adapter, opts);
    res.manifest = ds.manifest;
    if (through == Stage::ingest) {
      res.canonical_path = join(cfg.out_dir, "canonical.jsonl");
      save_canonical(ds.records, res.canonical_path);
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(Stage::ingest, e.what());
  }
  res.last_stage = Stage::ingest;
  if (through == Stage::ingest) return res;

  // --- split ---
  SplitAssignment assignment;
  try {
    assignment = split(ds.records, cfg.seed);
    for (int p = 0; p < 3; ++p)
      res.split_sizes[p] = assignment.size(static_cast<SplitPart>(p));
    res.split_path = join(cfg.out_dir, "split.jsonl");
    save_split(assignment, res.split_path);
  } catch (const std::exception& e) {
    throw StageError(Stage::split, e.what());
  }
  res.last_stage = Stage::split;
  if (through == Stage::split) return res;

  // --- finetune ---
  res.vocab_path = join(cfg.out_dir, "vocab.txt");
  res.init_checkpoint = join(cfg.out_dir, "encoder_init.ckpt");
  res.finetuned_checkpoint = join(cfg.out_dir, "encoder_finetuned.ckpt");
  std::optional<EncoderModel> model;
  Vocabulary vocab;
  try {
    const std::string expected_init = recipe_json(cfg, "init").dump();
    const std::string expected_finetuned = recipe_json(cfg, "finetuned").dump();
    if (fs::exists(res.finetuned_checkpoint) && fs::exists(res.vocab_path)) {
      try {
        const auto summary = verify_checkpoint(res.finetuned_checkpoint);
        const auto config = ordered_json::parse(summary.config_json);
        if (config.contains("recipe") &&
            config["recipe"].dump() ==
                ordered_json::parse(expected_finetuned).dump()) {
          Vocabulary stored = load_vocab(res.vocab_path);
          if (config.at("vocab_size").get<std::int32_t>() == stored.size()) {
            model.emplace(load_encoder_checkpoint(res.finetuned_checkpoint));
            vocab = std::move(stored);
            res.finetune_reused = true;
          }
        }
      } catch (const std::exception&) {
        // Unusable artifacts are rebuilt below.
      }
    }
    if (!res.finetune_reused) {
      std::vector<std::string> train_texts;
      std::vector<TokenizedSequence> train_seqs, val_seqs;
      std::vector<int> train_labels, val_labels;
      for (const Record& rec : ds.records)
        if (assignment.part_of(rec.id) == SplitPart::train)
          train_texts.push_back(rec.text);
      vocab = build_vocab(train_texts, cfg.vocab_target, cfg.vocab_min_freq);
      save_vocab(vocab, res.vocab_path);

      for (const Record& rec : ds.records) {
        const SplitPart part = assignment.part_of(rec.id);
        if (part == SplitPart::test) continue;
        auto seq = encode(rec.text, vocab, cfg.max_len);
        if (part == SplitPart::train) {
          train_seqs.push_back(std::move(seq));
          train_labels.push_back(rec.label_index);
        } else {
          val_seqs.push_back(std::move(seq));
          val_labels.push_back(rec.label_index);
        }
      }

      EncoderConfig ecfg = EncoderConfig::from_preset(cfg.preset);
      ecfg.vocab_size = vocab.size();
      Rng run_rng(cfg.seed);
      model.emplace(ecfg, run_rng.child("encoder.init"));
      save_encoder_checkpoint_with_recipe(*model, cfg.seed, expected_init,
                                          res.init_checkpoint);

      FinetuneConfig fcfg = cfg.finetune;
      fcfg.seed = cfg.seed;
      res.finetune_result = finetune(*model, train_seqs, train_labels,
                                     val_seqs, val_labels, fcfg);
      save_encoder_checkpoint_with_recipe(*model, cfg.seed, expected_finetuned,
                                          res.finetuned_checkpoint);
    }
  } catch (const std::exception& e) {
    throw StageError(Stage::finetune, e.what());
  }
  res.last_stage = Stage::finetune;
  if (through == Stage::finetune) return res;

  // --- encode ---
  std::vector<SentenceVector> vectors;
  std::uint64_t encoder_fp = 0;
  const int hidden = model->config().hidden_size;
  try {
    encoder_fp = checkpoint_fingerprint(res.finetuned_checkpoint);
    res.cache_path = join(cfg.out_dir, "vectors.vcache");
    std::vector<std::string> ids;
    ids.reserve(ds.records.size());
    for (const Record& rec : ds.records) ids.push_back(rec.id);

    if (fs::exists(res.cache_path)) {
      try {
        VectorCacheFile cache = load_vector_cache(res.cache_path);
        if (cache.encoder_fingerprint == encoder_fp &&
            cache.hidden == hidden && cache.ids == ids) {
          vectors.reserve(ids.size());
          for (std::size_t i = 0; i < ids.size(); ++i) {
            SentenceVector v;
            v.source_id = ids[i];
            v.values.assign(
                cache.values.begin() + static_cast<std::ptrdiff_t>(i) * hidden,
                cache.values.begin() +
                    static_cast<std::ptrdiff_t>(i + 1) * hidden);
            vectors.push_back(std::move(v));
          }
          res.encode_reused = true;
        }
      } catch (const std::exception&) {
        // Stale or corrupt caches are rebuilt below.
      }
    }
    if (!res.encode_reused) {
      std::vector<TokenizedSequence> seqs;
      seqs.reserve(ds.records.size());
      for (const Record& rec : ds.records)
        seqs.push_back(encode(rec.text, vocab, cfg.max_len));
      vectors = encode_dataset(*model, seqs, ids);

      VectorCacheFile cache;
      cache.dataset = ds.manifest.name;
      cache.encoder_fingerprint = encoder_fp;
      cache.hidden = hidden;
      cache.ids = ids;
      cache.values.reserve(ids.size() * static_cast<std::size_t>(hidden));
      for (const auto& v : vectors)
        cache.values.insert(cache.values.end(), v.values.begin(),
                            v.values.end());
      save_vector_cache(cache, res.cache_path);
    }
  } catch (const std::exception& e) {
    throw StageError(Stage::encode, e.what());
  }
  res.last_stage = Stage::encode;
  if (through == Stage::encode) return res;

  // --- train-head ---
  std::optional<ClassifierHead> head;
  std::vector<SentenceVector> part_vectors[3];
  std::vector<int> part_labels[3];
  try {
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      const int part = static_cast<int>(assignment.part_of(ds.records[i].id));
      part_vectors[part].push_back(vectors[i]);
      part_labels[part].push_back(ds.records[i].label_index);
    }

    res.head_checkpoint = join(cfg.out_dir, "head.ckpt");
    const std::string expected_head = recipe_json(cfg, "head").dump();
    if (fs::exists(res.head_checkpoint)) {
      try {
        const auto summary = verify_checkpoint(res.head_checkpoint);
        const auto config = ordered_json::parse(summary.config_json);
        if (config.contains("recipe") &&
            config["recipe"].dump() ==
                ordered_json::parse(expected_head).dump() &&
            config.at("encoder_fingerprint").get<std::uint64_t>() ==
                encoder_fp) {
          head.emplace(load_head_checkpoint(res.head_checkpoint));
          res.head_loaded = true;
        }
      } catch (const std::exception&) {
        // Unusable head checkpoints are retrained below.
      }
    }
    if (!res.head_loaded) {
      Rng run_rng(cfg.seed);
      head.emplace(cfg.head, hidden, run_rng.child("head.init." + cfg.head));
      TrainConfig tcfg = cfg.train;
      tcfg.seed = run_rng.child("head.train." + cfg.head).next_u64();
      constexpr int kTrain = static_cast<int>(SplitPart::train);
      constexpr int kVal = static_cast<int>(SplitPart::val);
      res.head_result =
          train_head(*head, part_vectors[kTrain], part_labels[kTrain],
                     part_vectors[kVal], part_labels[kVal], tcfg);
      if (persist_head)
        save_head_checkpoint_with_recipe(*head, hidden, expected_head,
                                         encoder_fp, res.head_checkpoint);
    }
    if (!persist_head && !res.head_loaded) res.head_checkpoint.clear();
  } catch (const std::exception& e) {
    throw StageError(Stage::train_head, e.what());
  }
  res.last_stage = Stage::train_head;
  if (through == Stage::train_head) return res;

  // --- eval ---
  try {
    constexpr int kTest = static_cast<int>(SplitPart::test);
    const auto preds =
        predict(*head, part_vectors[kTest], cfg.train.batch_size);
    res.test_metrics =
        metrics(confusion(preds, part_labels[kTest], 1), cfg.averaging);
  } catch (const std::exception& e) {
    throw StageError(Stage::eval, e.what());
  }
  res.last_stage = Stage::eval;
  if (through == Stage::eval) return res;

  // --- report ---
  try {
    BenchmarkGrid grid;
    grid.dataset = ds.manifest.name;
    grid.split_seed = cfg.seed;
    grid.averaging = cfg.averaging;
    grid.run_seeds = {cfg.seed};
    BenchmarkCell cell;
    cell.preset = cfg.preset;
    cell.head = cfg.head;
    cell.mean_metrics = res.test_metrics;
    grid.cells.push_back(std::move(cell));

    res.csv_report = join(cfg.out_dir, "report.csv");
    res.md_report = join(cfg.out_dir, "report.md");
    res.grid_path = join(cfg.out_dir, "grid.jsonl");
    std::ofstream csv(res.csv_report, std::ios::binary | std::ios::trunc);
    csv << render_report(grid, "csv");
    std::ofstream md(res.md_report, std::ios::binary | std::ios::trunc);
    md << render_report(grid, "markdown");
    if (!csv || !md) throw std::runtime_error("cannot write report files");
    save_grid(grid, res.grid_path);
  } catch (const std::exception& e) {
    throw StageError(Stage::report, e.what());
  }
  res.last_stage = Stage::report;
  return res;
}

BenchmarkArtifacts run_benchmark_command(const PipelineConfig& cfg) {
  cfg.validate();
  Dataset ds;
  try {
    fs::create_directories(cfg.out_dir);
    LoadOptions opts;
    opts.scheme = cfg.scheme;
    opts.dataset_name = cfg.dataset_name;
    opts.text_column = cfg.text_column;
    opts.label_column = cfg.label_column;
    ds = load_dataset(cfg.dataset_path, cfg.dataset_adapter, opts);
  } catch (const std::exception& e) {
    throw StageError(Stage::ingest, e.what());
  }
  SplitAssignment assignment;
  try {
    assignment = split(ds.records, cfg.seed);
    save_split(assignment, join(cfg.out_dir, "split.jsonl"));
  } catch (const std::exception& e) {
    throw StageError(Stage::split, e.what());
  }

  BenchmarkArtifacts artifacts;
  const auto presets = cfg.benchmark_presets.empty()
                           ? std::vector<std::string>{cfg.preset}
                           : cfg.benchmark_presets;
  const auto heads = cfg.benchmark_heads.empty()
                         ? ClassifierHead::benchmark_variants()
                         : cfg.benchmark_heads;
  const auto seeds = cfg.benchmark_seeds.empty()
                         ? std::vector<std::uint64_t>{cfg.seed}
                         : cfg.benchmark_seeds;
  BenchmarkOptions opts;
  opts.finetune = cfg.finetune;
  opts.train = cfg.train;
  opts.max_len = cfg.max_len;
  opts.vocab_target = cfg.vocab_target;
  opts.vocab_min_freq = cfg.vocab_min_freq;
  opts.averaging = cfg.averaging;
  artifacts.grid = run_benchmark(ds, assignment, presets, heads, seeds, opts);

  try {
    artifacts.csv_report = join(cfg.out_dir, "report.csv");
    artifacts.md_report = join(cfg.out_dir, "report.md");
    artifacts.grid_path = join(cfg.out_dir, "grid.jsonl");
    std::ofstream csv(artifacts.csv_report, std::ios::binary | std::ios::trunc);
    csv << render_report(artifacts.grid, "csv");
    std::ofstream md(artifacts.md_report, std::ios::binary | std::ios::trunc);
    md << render_report(artifacts.grid, "markdown");
    if (!csv || !md) throw std::runtime_error("cannot write report files");
    save_grid(artifacts.grid, artifacts.grid_path);
  } catch (const std::exception& e) {
    throw StageError(Stage::report, e.what());
  }
  return artifacts;
}

BenchmarkGrid load_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_grid: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_grid: empty file " + path);
  BenchmarkGrid grid;
  try {
    const auto header = ordered_json::parse(line);
    grid.dataset = header.at("dataset").get<std::string>();
    grid.split_seed = header.at("split_seed").get<std::uint64_t>();
    const auto averaging = header.at("averaging").get<std::string>();
    if (averaging == "macro") grid.averaging = Averaging::macro;
    else if (averaging == "positive-class")
      grid.averaging = Averaging::positive_class;
    else throw std::runtime_error("unknown averaging \"" + averaging + "\"");
    grid.run_seeds = header.at("run_seeds").get<std::vector<std::uint64_t>>();
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto row = ordered_json::parse(line);
      BenchmarkCell cell;
      cell.preset = row.at("preset").get<std::string>();
      cell.head = row.at("head").get<std::string>();
      cell.mean_metrics.accuracy = row.at("accuracy").get<double>();
      cell.mean_metrics.precision = row.at("precision").get<double>();
      cell.mean_metrics.recall = row.at("recall").get<double>();
      cell.mean_metrics.f1 = row.at("f1").get<double>();
      cell.mean_metrics.averaging = grid.averaging;
      cell.failed = row.at("failed").get<bool>();
      cell.error = row.at("error").get<std::string>();
      grid.cells.push_back(std::move(cell));
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("load_grid: " + path + ": " + e.what());
  }
  return grid;
}

}  // namespace credence
