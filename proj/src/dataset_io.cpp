#include "spn/dataset_io.hpp"

#include <filesystem>
#include <fstream>

#include "spn/errors.hpp"

namespace spn {
namespace {

using nlohmann::json;

json array_to_json(const DenseArray& a, std::size_t dim, std::size_t offset) {
  const std::size_t extent = static_cast<std::size_t>(a.shape[dim]);
  std::size_t stride = 1;
  for (std::size_t d = dim + 1; d < a.shape.size(); ++d)
    stride *= static_cast<std::size_t>(a.shape[d]);
  json out = json::array();
  if (dim + 1 == a.shape.size()) {
    for (std::size_t i = 0; i < extent; ++i) out.push_back(a.data[offset + i]);
  } else {
    for (std::size_t i = 0; i < extent; ++i)
      out.push_back(array_to_json(a, dim + 1, offset + i * stride));
  }
  return out;
}

void collect_values(const json& j, int rank, std::vector<std::int64_t>& shape,
                    std::size_t dim, std::vector<double>& out) {
  if (!j.is_array())
    throw ParseError("expected a depth-" + std::to_string(rank) + " numeric array");
  const std::int64_t extent = static_cast<std::int64_t>(j.size());
  if (extent == 0) throw ParseError("empty array extent");
  if (dim == shape.size())
    shape.push_back(extent);
  else if (shape[dim] != extent)
    throw ParseError("ragged array: extent " + std::to_string(extent) +
                     " where " + std::to_string(shape[dim]) + " expected");
  for (const json& e : j) {
    if (static_cast<int>(dim) + 1 == rank) {
      if (!e.is_number()) throw ParseError("non-numeric array element");
      out.push_back(e.get<double>());
    } else {
      collect_values(e, rank, shape, dim + 1, out);
    }
  }
}

DenseArray array_from_json(const json& j, int rank) {
  std::vector<std::int64_t> shape;
  std::vector<double> values;
  collect_values(j, rank, shape, 0, values);
  if (static_cast<int>(shape.size()) != rank)
    throw ParseError("array rank mismatch");
  return DenseArray(shape, std::move(values));
}

const json& require(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing field '") + key + "'");
  return *it;
}

}  // namespace

std::int64_t DatasetManifest::split_count(const std::string& name) const {
  for (const SplitSpec& s : splits)
    if (s.name == name) return s.count;
  throw LookupError("unknown split '" + name + "'");
}

nlohmann::json generator_config_to_json(const GeneratorConfig& cfg) {
  return json{{"t_obs", cfg.t_obs},
              {"t_pred", cfg.t_pred},
              {"img_w", cfg.img_w},
              {"img_h", cfg.img_h},
              {"ctx_size", cfg.ctx_size},
              {"seg_classes", cfg.seg_classes},
              {"k_nb", cfg.k_nb},
              {"n_joints", cfg.n_joints},
              {"n_concepts", cfg.n_concepts},
              {"n_actions", cfg.n_actions},
              {"p_cross", cfg.p_cross},
              {"p_stand", cfg.p_stand},
              {"p_concept", cfg.p_concept},
              {"sigma_traj", cfg.sigma_traj},
              {"sigma_pose", cfg.sigma_pose},
              {"sigma_ego", cfg.sigma_ego},
              {"sigma_ctx", cfg.sigma_ctx}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  try {
    cfg.t_obs = require(j, "t_obs").get<int>();
    cfg.t_pred = require(j, "t_pred").get<int>();
    cfg.img_w = require(j, "img_w").get<int>();
    cfg.img_h = require(j, "img_h").get<int>();
    cfg.ctx_size = require(j, "ctx_size").get<int>();
    cfg.seg_classes = require(j, "seg_classes").get<int>();
    cfg.k_nb = require(j, "k_nb").get<int>();
    cfg.n_joints = require(j, "n_joints").get<int>();
    cfg.n_concepts = require(j, "n_concepts").get<int>();
    cfg.n_actions = require(j, "n_actions").get<int>();
    cfg.p_cross = require(j, "p_cross").get<double>();
    cfg.p_stand = require(j, "p_stand").get<double>();
    cfg.p_concept = require(j, "p_concept").get<double>();
    cfg.sigma_traj = require(j, "sigma_traj").get<double>();
    cfg.sigma_pose = require(j, "sigma_pose").get<double>();
    cfg.sigma_ego = require(j, "sigma_ego").get<double>();
    cfg.sigma_ctx = require(j, "sigma_ctx").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad generator config: ") + e.what());
  }
  return cfg;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  json splits = json::array();
  for (const SplitSpec& s : m.splits)
    splits.push_back(json{{"name", s.name}, {"count", s.count}});
  return json{{"format", m.format},
              {"base_seed", m.base_seed},
              {"splits", splits},
              {"generator", generator_config_to_json(m.generator)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.format = require(j, "format").get<std::string>();
    if (m.format != kDatasetFormat)
      throw VersionError("unsupported dataset format '" + m.format + "', expected '" +
                         kDatasetFormat + "'");
    m.base_seed = require(j, "base_seed").get<std::uint64_t>();
    for (const json& s : require(j, "splits")) {
      SplitSpec spec;
      spec.name = require(s, "name").get<std::string>();
      spec.count = require(s, "count").get<std::int64_t>();
      if (spec.count < 0) throw ParseError("negative split count");
      m.splits.push_back(spec);
    }
    m.generator = generator_config_from_json(require(j, "generator"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad manifest: ") + e.what());
  }
  return m;
}

nlohmann::json sample_to_json(const Sample& s) {
  return json{{"id", s.id},
              {"split", s.split},
              {"concepts", s.concepts},
              {"action", s.action},
              {"ctx", array_to_json(s.ctx, 0, 0)},
              {"pose_obs", array_to_json(s.pose_obs, 0, 0)},
              {"traj_obs", array_to_json(s.traj_obs, 0, 0)},
              {"ego_obs", array_to_json(s.ego_obs, 0, 0)},
              {"social", array_to_json(s.social, 0, 0)},
              {"neighbor_count", s.neighbor_count},
              {"traj_fut", array_to_json(s.traj_fut, 0, 0)},
              {"pose_fut", array_to_json(s.pose_fut, 0, 0)},
              {"img_size", json::array({s.img_w, s.img_h})}};
}

Sample sample_from_json(const nlohmann::json& j) {
  Sample s;
  try {
    s.id = require(j, "id").get<std::int64_t>();
    s.split = require(j, "split").get<std::string>();
    s.concepts = require(j, "concepts").get<std::vector<int>>();
    s.action = require(j, "action").get<int>();
    s.ctx = array_from_json(require(j, "ctx"), 3);
    s.pose_obs = array_from_json(require(j, "pose_obs"), 3);
    s.traj_obs = array_from_json(require(j, "traj_obs"), 2);
    s.ego_obs = array_from_json(require(j, "ego_obs"), 2);
    s.social = array_from_json(require(j, "social"), 2);
    s.neighbor_count = require(j, "neighbor_count").get<int>();
    s.traj_fut = array_from_json(require(j, "traj_fut"), 2);
    s.pose_fut = array_from_json(require(j, "pose_fut"), 3);
    const json& sz = require(j, "img_size");
    if (!sz.is_array() || sz.size() != 2) throw ParseError("img_size must be [w, h]");
    s.img_w = sz[0].get<std::int64_t>();
    s.img_h = sz[1].get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad sample record: ") + e.what());
  }
  return s;
}

void generate_dataset(const GeneratorConfig& cfg, std::uint64_t base_seed,
                      const std::vector<SplitSpec>& splits, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir + "': " + ec.message());

  DatasetManifest m;
  m.base_seed = base_seed;
  m.splits = splits;
  m.generator = cfg;
  {
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in '" + dir + "'");
    out << manifest_to_json(m).dump(2) << "\n";
  }

  std::int64_t next_id = 0;
  for (const SplitSpec& spec : splits) {
    std::ofstream out(fs::path(dir) / (spec.name + ".jsonl"));
    if (!out) throw IoError("cannot write split '" + spec.name + "' in '" + dir + "'");
    for (std::int64_t i = 0; i < spec.count; ++i, ++next_id) {
      const Sample s = generate_scenario(cfg, base_seed, next_id, spec.name);
      out << sample_to_json(s).dump() << "\n";
    }
    if (!out) throw IoError("write failure on split '" + spec.name + "'");
  }
}

DatasetManifest read_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("cannot open manifest in '" + dir + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest is not valid JSON: ") + e.what());
  }
  return manifest_from_json(j);
}

std::vector<Sample> read_split(const std::string& dir, const std::string& split) {
  namespace fs = std::filesystem;
  const DatasetManifest m = read_manifest(dir);
  const std::int64_t expected = m.split_count(split);  // LookupError if unknown

  std::ifstream in(fs::path(dir) / (split + ".jsonl"));
  if (!in) throw IoError("cannot open split file '" + split + ".jsonl' in '" + dir + "'");

  std::vector<Sample> out;
  std::string line;
  std::int64_t record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ParseError("split '" + split + "' record " + std::to_string(record) +
                       ": invalid JSON");
    try {
      out.push_back(sample_from_json(j));
    } catch (const ParseError& e) {
      throw ParseError("split '" + split + "' record " + std::to_string(record) +
                       ": " + e.what());
    }
    ++record;
  }
  if (static_cast<std::int64_t>(out.size()) != expected)
    throw ParseError("split '" + split + "' has " + std::to_string(out.size()) +
                     " records, manifest says " + std::to_string(expected));
  return out;
}

}  // namespace spn
