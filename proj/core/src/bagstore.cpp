#include "remix/bagstore.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "remix/rng.hpp"

namespace fs = std::filesystem;

namespace remix {

BagMemoryTracker& BagMemoryTracker::instance() {
  static BagMemoryTracker tracker;
  return tracker;
}

void BagMemoryTracker::acquire(uint64_t bytes) {
  uint64_t now = current_.fetch_add(bytes) + bytes;
  uint64_t prev = peak_.load();
  while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
  }
}

void BagMemoryTracker::release(uint64_t bytes) { current_.fetch_sub(bytes); }

void BagMemoryTracker::reset() {
  current_.store(0);
  peak_.store(0);
}

namespace {

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("truncated file: " + path);
  }
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void write_f32_payload(std::ostream& os, const float* data, size_t count) {
  static_assert(sizeof(float) == 4);
  // Little-endian hosts only; all supported targets qualify.
  os.write(reinterpret_cast<const char*>(data), std::streamsize(count * 4));
}

void read_f32_payload(std::istream& is, float* data, size_t count, const std::string& path) {
  if (!is.read(reinterpret_cast<char*>(data), std::streamsize(count * 4))) {
    throw std::runtime_error("truncated payload: " + path);
  }
}

void check_magic(std::istream& is, const char* expect, const std::string& path) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, expect, 4) != 0) {
    throw std::runtime_error("bad magic in " + path + " (expected " + expect + ")");
  }
}

void require_finite(const MatrixRXf& m, const std::string& what) {
  if (!m.allFinite()) {
    throw std::runtime_error("non-finite feature in " + what);
  }
}

uint64_t file_size_or_throw(const std::string& path) {
  std::error_code ec;
  uint64_t size = fs::file_size(path, ec);
  if (ec) throw std::runtime_error("cannot stat " + path + ": " + ec.message());
  return size;
}

}  // namespace

void write_bag(const FeatureBag& bag, const std::string& path) {
  if (bag.features.rows() < 1 || bag.features.cols() < 1) {
    throw std::runtime_error("empty bag " + bag.bag_id);
  }
  require_finite(bag.features, "bag " + bag.bag_id);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("RMX1", 4);
  write_u32(os, uint32_t(bag.features.rows()));
  write_u32(os, uint32_t(bag.features.cols()));
  write_u32(os, bag.label);
  write_f32_payload(os, bag.features.data(), size_t(bag.features.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

FeatureBag read_bag(const std::string& path) {
  uint64_t size = file_size_or_throw(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  check_magic(is, "RMX1", path);
  uint32_t n = read_u32(is, path);
  uint32_t d = read_u32(is, path);
  uint32_t label = read_u32(is, path);
  uint64_t expect = 16 + uint64_t(n) * d * 4;
  if (n == 0 || d == 0 || size != expect) {
    throw std::runtime_error("truncated or inconsistent payload: " + path);
  }
  FeatureBag bag;
  bag.bag_id = fs::path(path).stem().string();
  bag.label = label;
  bag.features.resize(n, d);
  read_f32_payload(is, bag.features.data(), size_t(n) * d, path);
  return bag;
}

void write_dictionary(const BagDictionary& dict, const std::string& path) {
  const auto k = dict.centroids.rows();
  const auto d = dict.centroids.cols();
  if (k < 1 || d < 1) throw std::runtime_error("empty dictionary " + dict.bag_id);
  require_finite(dict.centroids, "dictionary " + dict.bag_id);
  if (dict.member_counts.size() != size_t(k)) {
    throw std::runtime_error("member count size mismatch in " + dict.bag_id);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("RMXR", 4);
  write_u32(os, uint32_t(k));
  write_u32(os, uint32_t(d));
  write_u32(os, dict.label);
  char mode = char(dict.cov_mode);
  os.write(&mode, 1);
  for (uint32_t c : dict.member_counts) write_u32(os, c);
  write_f32_payload(os, dict.centroids.data(), size_t(dict.centroids.size()));
  if (dict.cov_mode != CovMode::None) {
    if (dict.covariances.size() != size_t(k)) {
      throw std::runtime_error("covariance count mismatch in " + dict.bag_id);
    }
    for (const auto& cov : dict.covariances) {
      write_f32_payload(os, cov.data(), size_t(cov.size()));
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

BagDictionary read_dictionary(const std::string& path) {
  uint64_t size = file_size_or_throw(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  check_magic(is, "RMXR", path);
  uint32_t k = read_u32(is, path);
  uint32_t d = read_u32(is, path);
  uint32_t label = read_u32(is, path);
  char mode_byte = 0;
  if (!is.read(&mode_byte, 1)) throw std::runtime_error("truncated file: " + path);
  if (mode_byte < 0 || mode_byte > 2) throw std::runtime_error("bad covariance mode in " + path);
  CovMode mode = CovMode(mode_byte);
  uint64_t cov_floats = mode == CovMode::None ? 0
                        : mode == CovMode::Diag ? uint64_t(k) * d
                                                : uint64_t(k) * d * d;
  uint64_t expect = 17 + uint64_t(k) * 4 + (uint64_t(k) * d + cov_floats) * 4;
  if (k == 0 || d == 0 || size != expect) {
    throw std::runtime_error("truncated or inconsistent payload: " + path);
  }
  BagDictionary dict;
  dict.bag_id = fs::path(path).stem().string();
  dict.label = label;
  dict.cov_mode = mode;
  dict.member_counts.resize(k);
  for (uint32_t i = 0; i < k; ++i) dict.member_counts[i] = read_u32(is, path);
  dict.centroids.resize(k, d);
  read_f32_payload(is, dict.centroids.data(), size_t(k) * d, path);
  if (mode != CovMode::None) {
    dict.covariances.resize(k);
    for (uint32_t i = 0; i < k; ++i) {
      auto& cov = dict.covariances[i];
      if (mode == CovMode::Diag) {
        cov.resize(1, d);
      } else {
        cov.resize(d, d);
      }
      read_f32_payload(is, cov.data(), size_t(cov.size()), path);
    }
  }
  return dict;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

BagManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  BagManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  if (m.base_dir.empty()) m.base_dir = ".";
  std::string stem = fs::path(path).stem().string();
  m.split = stem.find("test") != std::string::npos ? "test" : "train";

  std::string line;
  if (!std::getline(is, line) || split_csv_line(line) != std::vector<std::string>{
          "bag_id", "label", "path", "n_instances", "dim"}) {
    throw std::runtime_error("manifest " + path + ": bad header line");
  }
  std::unordered_set<std::string> seen;
  uint32_t max_label = 0;
  size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 5) {
      throw std::runtime_error("manifest " + path + " line " + std::to_string(line_no) +
                               ": expected 5 fields");
    }
    ManifestEntry e;
    e.bag_id = fields[0];
    try {
      e.label = uint32_t(std::stoul(fields[1]));
      e.path = fields[2];
      e.n_instances = uint32_t(std::stoul(fields[3]));
      e.dim = uint32_t(std::stoul(fields[4]));
    } catch (const std::exception&) {
      throw std::runtime_error("manifest " + path + " line " + std::to_string(line_no) +
                               ": parse error");
    }
    if (!seen.insert(e.bag_id).second) {
      throw std::runtime_error("manifest " + path + ": duplicate bag_id " + e.bag_id);
    }
    if (!m.entries.empty() && e.dim != m.entries.front().dim) {
      throw std::runtime_error("manifest " + path + ": inconsistent dimension (" +
                               std::to_string(m.entries.front().dim) + " vs " +
                               std::to_string(e.dim) + ")");
    }
    max_label = std::max(max_label, e.label);
    m.entries.push_back(std::move(e));
  }
  m.class_count = m.entries.empty() ? 0 : max_label + 1;
  return m;
}

void write_manifest(const BagManifest& manifest, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << "bag_id,label,path,n_instances,dim\n";
  for (const auto& e : manifest.entries) {
    os << e.bag_id << ',' << e.label << ',' << e.path << ',' << e.n_instances << ',' << e.dim
       << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void SynthConfig::validate() const {
  if (class_count < 2) throw std::runtime_error("class_count must be >= 2");
  if (dim < 1) throw std::runtime_error("dim must be >= 1");
  if (n_min < 1 || n_max < n_min) throw std::runtime_error("bad instance-count range");
  if (evidence_fraction <= 0.0 || evidence_fraction > 1.0) {
    throw std::runtime_error("evidence fraction must be in (0,1]");
  }
  if (std::ceil(evidence_fraction * n_min) < 1.0) {
    throw std::runtime_error("rho*n_min must be >= 1");
  }
  if (background_components < 1 || evidence_components_per_class < 1) {
    throw std::runtime_error("component counts must be >= 1");
  }
  if (uint64_t(class_count) * evidence_components_per_class > dim) {
    throw std::runtime_error("need class_count*evidence_components <= dim for separable placement");
  }
}

SynthResult generate_synthetic_dataset(const SynthConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir + ": " + ec.message());
  fs::create_directories(fs::path(out_dir) / "bags", ec);

  const uint32_t C = cfg.class_count;
  const uint32_t E = cfg.evidence_components_per_class;
  const uint32_t B = cfg.background_components;
  const uint32_t d = cfg.dim;

  // Evidence means sit on distinct coordinate axes at a separation that
  // dwarfs the component std; background means stay near the origin. This
  // placement makes nearest-evidence-mean bag classification exact.
  const double separation = 8.0 + 8.0 * cfg.component_std;
  SynthResult result;
  result.evidence_means.resize(C);
  for (uint32_t c = 0; c < C; ++c) {
    for (uint32_t e = 0; e < E; ++e) {
      Eigen::VectorXf mean = Eigen::VectorXf::Zero(d);
      mean[(c * E + e) % d] = float(separation);
      result.evidence_means[c].push_back(mean);
    }
  }
  Rng bg_rng(derive_seed(cfg.seed, uint64_t(0xb4c6)));
  std::vector<Eigen::VectorXf> background_means;
  for (uint32_t b = 0; b < B; ++b) {
    Eigen::VectorXf mean(d);
    for (uint32_t j = 0; j < d; ++j) mean[j] = float(bg_rng.normal() * 0.5);
    background_means.push_back(mean);
  }

  std::ofstream record(fs::path(out_dir) / "generation_record.csv");
  if (!record) throw std::runtime_error("cannot write generation record in " + out_dir);
  record << "bag_id,instance_index,component_id,is_evidence\n";

  auto make_split = [&](const std::string& split, uint32_t bags_per_class) {
    BagManifest manifest;
    manifest.split = split;
    manifest.base_dir = out_dir;
    manifest.class_count = C;
    for (uint32_t c = 0; c < C; ++c) {
      for (uint32_t b = 0; b < bags_per_class; ++b) {
        std::string bag_id = split + "_c" + std::to_string(c) + "_b" + std::to_string(b);
        Rng rng(derive_seed(cfg.seed, bag_id));
        uint32_t n = cfg.n_min + uint32_t(rng.uniform_int(cfg.n_max - cfg.n_min + 1));
        uint32_t n_evidence = uint32_t(std::ceil(cfg.evidence_fraction * n));

        FeatureBag bag;
        bag.bag_id = bag_id;
        bag.label = c;
        bag.features.resize(n, d);
        for (uint32_t i = 0; i < n; ++i) {
          bool is_evidence = i < n_evidence;
          uint32_t component_id;
          const Eigen::VectorXf* mean;
          if (is_evidence) {
            uint32_t e = uint32_t(rng.uniform_int(E));
            component_id = B + c * E + e;
            mean = &result.evidence_means[c][e];
          } else {
            uint32_t bcomp = uint32_t(rng.uniform_int(B));
            component_id = bcomp;
            mean = &background_means[bcomp];
          }
          for (uint32_t j = 0; j < d; ++j) {
            bag.features(i, j) = (*mean)[j] + float(rng.normal() * cfg.component_std);
          }
          record << bag_id << ',' << i << ',' << component_id << ',' << (is_evidence ? 1 : 0)
                 << '\n';
        }
        std::string rel = "bags/" + bag_id + ".rmx1";
        write_bag(bag, out_dir + "/" + rel);
        manifest.entries.push_back({bag_id, c, rel, n, d});
      }
    }
    write_manifest(manifest, out_dir + "/" + split + ".csv");
    return manifest;
  };

  result.train = make_split("train", cfg.train_bags_per_class);
  result.test = make_split("test", cfg.test_bags_per_class);
  if (!record) throw std::runtime_error("generation record write failed");
  return result;
}

DatasetStats dataset_stats(const BagManifest& manifest) {
  if (manifest.entries.empty()) throw std::runtime_error("no bags in manifest");
  DatasetStats stats;
  stats.bag_count = manifest.entries.size();
  stats.dim = manifest.entries.front().dim;
  stats.min_instances = UINT32_MAX;
  stats.class_histogram.assign(manifest.class_count, 0);
  for (const auto& e : manifest.entries) {
    if (!fs::exists(manifest.resolve(e))) {
      throw std::runtime_error("missing bag file: " + manifest.resolve(e));
    }
    stats.total_instances += e.n_instances;
    stats.min_instances = std::min(stats.min_instances, e.n_instances);
    stats.max_instances = std::max(stats.max_instances, e.n_instances);
    if (e.label < stats.class_histogram.size()) ++stats.class_histogram[e.label];
  }
  stats.mean_instances =
      std::round(100.0 * double(stats.total_instances) / double(stats.bag_count)) / 100.0;
  return stats;
}

}  // namespace remix
