#pragma once

// On-disk formats: CANF feature files (binary) and their CSV alternative,
// detection / ground-truth / trajectory CSVs, association-event JSON lines,
// model and world-config JSON.

#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cantrack/aggregation.hpp"
#include "cantrack/association.hpp"
#include "cantrack/error.hpp"
#include "cantrack/metrics.hpp"
#include "cantrack/synthworld.hpp"
#include "cantrack/types.hpp"

namespace cantrack::io {

using json = nlohmann::json;

inline constexpr std::array<char, 4> kCanfMagic{'C', 'A', 'N', 'F'};
inline constexpr std::uint16_t kCanfVersion = 1;
inline constexpr int kModelSchemaVersion = 1;

// Shortest representation that parses back to the same double.
inline std::string fmt(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw ContractError("cannot format number");
  return std::string(buf.data(), end);
}

inline std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

// ---------------------------------------------------------------- features

namespace detail {

inline void put_u16(std::ostream& o, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  o.write(b, 2);
}
inline void put_u32(std::ostream& o, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
  o.write(b, 4);
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

}  // namespace detail

// Rounds through float32, the precision features are stored at.
inline FeatureVector quantize(const FeatureVector& v) { return v.cast<float>().cast<double>(); }

inline void write_canf(const std::filesystem::path& path, const std::vector<FeatureVector>& features) {
  const std::size_t dim = features.empty() ? 0 : static_cast<std::size_t>(features.front().size());
  auto out = open_out(path, std::ios::binary);
  out.write(kCanfMagic.data(), 4);
  detail::put_u16(out, kCanfVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(features.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(dim));
  for (const auto& f : features) {
    if (static_cast<std::size_t>(f.size()) != dim) throw ShapeError("CANF: features differ in dimension");
    for (Eigen::Index k = 0; k < f.size(); ++k) {
      const float x = static_cast<float>(f(k));
      std::uint32_t bits;
      std::memcpy(&bits, &x, 4);
      detail::put_u32(out, bits);
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<FeatureVector> read_canf(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 14 || std::memcmp(bytes.data(), kCanfMagic.data(), 4) != 0) {
    throw ValidationError(path.string() + ": not a CANF feature file");
  }
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kCanfVersion) throw ValidationError(path.string() + ": unsupported CANF version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(&bytes[6]);
  const std::uint32_t dim = detail::get_u32(&bytes[10]);
  if (bytes.size() != 14 + std::size_t{count} * dim * 4) {
    throw ValidationError(path.string() + ": payload size does not match header (count " + std::to_string(count) +
                          ", dim " + std::to_string(dim) + ")");
  }
  std::vector<FeatureVector> out(count, FeatureVector(static_cast<Eigen::Index>(dim)));
  const unsigned char* p = bytes.data() + 14;
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::uint32_t k = 0; k < dim; ++k, p += 4) {
      const std::uint32_t bits = detail::get_u32(p);
      float x;
      std::memcpy(&x, &bits, 4);
      out[i](k) = static_cast<double>(x);
    }
  }
  return out;
}

// ---------------------------------------------------------------- CSV

namespace detail {

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t comma = line.find(',', pos);
    std::string_view cell = line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    out.push_back(cell);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, const std::string& where) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError(where + ": cannot parse '" + std::string(s) + "' as a number");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells;
    for (auto c : split(line)) cells.emplace_back(c);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                            std::to_string(t.header.size()) + " columns, found " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw ValidationError(path.string() + ": missing header");
  return t;
}

inline void expect_header(const CsvTable& t, const std::vector<std::string>& want, const std::filesystem::path& path,
                          std::size_t optional_tail = 0) {
  const bool ok = (t.header.size() == want.size() || t.header.size() + optional_tail == want.size()) &&
                  std::equal(t.header.begin(), t.header.end(), want.begin());
  if (!ok) {
    std::string expected;
    for (const auto& w : want) expected += (expected.empty() ? "" : ",") + w;
    throw ValidationError(path.string() + " line 1: header must be " + expected);
  }
}

}  // namespace detail

inline void write_features_csv(const std::filesystem::path& path, const std::vector<FeatureVector>& features) {
  auto out = open_out(path);
  const Eigen::Index dim = features.empty() ? 0 : features.front().size();
  out << "id";
  for (Eigen::Index k = 1; k <= dim; ++k) out << ",v" << k;
  out << '\n';
  for (std::size_t i = 0; i < features.size(); ++i) {
    out << i;
    for (Eigen::Index k = 0; k < dim; ++k) out << ',' << fmt(features[i](k));
    out << '\n';
  }
}

// Rows may arrive in any order; ids must cover 0..count-1 exactly once.
inline std::vector<FeatureVector> read_features_csv(const std::filesystem::path& path) {
  const auto t = detail::read_csv(path);
  if (t.header.empty() || t.header.front() != "id") throw ValidationError(path.string() + " line 1: first column must be id");
  const std::size_t dim = t.header.size() - 1;
  std::vector<FeatureVector> out(t.rows.size());
  std::vector<bool> seen(t.rows.size(), false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = path.string() + " line " + std::to_string(t.line_numbers[r]);
    const auto id = detail::parse_number<std::size_t>(t.rows[r][0], where);
    if (id >= out.size() || seen[id]) throw ValidationError(where + ": feature id " + std::to_string(id) + " out of range or repeated");
    seen[id] = true;
    out[id].resize(static_cast<Eigen::Index>(dim));
    for (std::size_t k = 0; k < dim; ++k) out[id](static_cast<Eigen::Index>(k)) = detail::parse_number<double>(t.rows[r][k + 1], where);
  }
  return out;
}

// Dispatches on the file's magic bytes.
inline std::vector<FeatureVector> read_features(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, kCanfMagic.data(), 4) == 0) return read_canf(path);
  return read_features_csv(path);
}

inline const std::vector<std::string>& detection_header() {
  static const std::vector<std::string> h{"camera", "frame", "x", "y", "w", "h", "feature_id", "gt_identity"};
  return h;
}

inline void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets, bool with_gt) {
  auto out = open_out(path);
  out << "camera,frame,x,y,w,h,feature_id" << (with_gt ? ",gt_identity" : "") << '\n';
  for (const auto& d : dets) {
    out << d.camera << ',' << d.frame << ',' << fmt(d.box.x) << ',' << fmt(d.box.y) << ',' << fmt(d.box.w) << ','
        << fmt(d.box.h) << ',' << d.feature_id;
    if (with_gt) {
      if (!d.gt_identity) throw ValidationError("detection " + std::to_string(d.feature_id) + " lacks gt_identity");
      out << ',' << *d.gt_identity;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// Detections CSV with features resolved from `features` by feature_id.
// `require_gt` demands the gt_identity column (ground-truth files).
inline std::vector<Detection> read_detections(const std::filesystem::path& path,
                                              const std::vector<FeatureVector>* features, bool require_gt = false) {
  const auto t = detail::read_csv(path);
  detail::expect_header(t, detection_header(), path, require_gt ? 0 : 1);
  const bool has_gt = t.header.size() == detection_header().size();
  std::vector<Detection> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = path.string() + " line " + std::to_string(t.line_numbers[r]);
    Detection d;
    d.camera = detail::parse_number<int>(row[0], where);
    d.frame = detail::parse_number<std::int64_t>(row[1], where);
    d.box = {detail::parse_number<double>(row[2], where), detail::parse_number<double>(row[3], where),
             detail::parse_number<double>(row[4], where), detail::parse_number<double>(row[5], where)};
    d.feature_id = detail::parse_number<std::int64_t>(row[6], where);
    if (has_gt) d.gt_identity = detail::parse_number<int>(row[7], where);
    if (d.frame < 0) throw ValidationError(where + ": negative frame");
    if (!d.box.valid()) throw ValidationError(where + ": box needs positive width and height");
    if (features) {
      if (d.feature_id < 0 || static_cast<std::size_t>(d.feature_id) >= features->size()) {
        throw ValidationError(where + ": feature_id " + std::to_string(d.feature_id) + " not in feature file");
      }
      d.feature = (*features)[static_cast<std::size_t>(d.feature_id)];
    }
    out.push_back(std::move(d));
  }
  return out;
}

struct GroundTruth {
  GroundTruthLog log;
  IdentityLookup identity_of;
};

inline GroundTruth read_ground_truth(const std::filesystem::path& path) {
  const auto dets = read_detections(path, nullptr, true);
  GroundTruth gt;
  for (const auto& d : dets) {
    gt.log.add(d.camera, d.frame, *d.gt_identity, d.box);
    gt.identity_of[d.feature_id] = *d.gt_identity;
  }
  return gt;
}

inline const std::vector<std::string>& trajectory_header() {
  static const std::vector<std::string> h{"camera", "frame", "x", "y", "w", "h", "track_id", "global_identity"};
  return h;
}

// One row per detection, ordered by (frame, camera, track).
inline void write_trajectories(const std::filesystem::path& path, const std::vector<Detection>& dets,
                               const std::vector<Trajectory>& trajs) {
  struct Row {
    std::int64_t frame;
    int camera;
    int track;
    int global;
    std::size_t det;
  };
  std::vector<Row> rows;
  for (const auto& t : trajs) {
    for (std::size_t di : t.detections) rows.push_back({dets[di].frame, t.camera, t.id, t.global_identity.value_or(-1), di});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.frame, a.camera, a.track) < std::tie(b.frame, b.camera, b.track);
  });
  auto out = open_out(path);
  out << "camera,frame,x,y,w,h,track_id,global_identity\n";
  for (const auto& r : rows) {
    const auto& b = dets[r.det].box;
    out << r.camera << ',' << r.frame << ',' << fmt(b.x) << ',' << fmt(b.y) << ',' << fmt(b.w) << ',' << fmt(b.h) << ','
        << r.track << ',' << r.global << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

struct HypothesisLogs {
  HypothesisLog global;  // identities = global_identity
  HypothesisLog tracklets;  // identities = track_id
};

inline HypothesisLogs read_trajectories(const std::filesystem::path& path) {
  const auto t = detail::read_csv(path);
  detail::expect_header(t, trajectory_header(), path);
  HypothesisLogs h;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = path.string() + " line " + std::to_string(t.line_numbers[r]);
    const int camera = detail::parse_number<int>(row[0], where);
    const auto frame = detail::parse_number<std::int64_t>(row[1], where);
    const BBox box{detail::parse_number<double>(row[2], where), detail::parse_number<double>(row[3], where),
                   detail::parse_number<double>(row[4], where), detail::parse_number<double>(row[5], where)};
    const int track = detail::parse_number<int>(row[6], where);
    const int global = detail::parse_number<int>(row[7], where);
    try {
      h.global.add(camera, frame, global, box);
      h.tracklets.add(camera, frame, track, box);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return h;
}

// ---------------------------------------------------------------- events

inline json to_json(const AssociationEvent& ev) {
  json j;
  j["time"] = ev.time;
  j["camera"] = ev.camera;
  j["frame"] = ev.frame;
  j["feature_id"] = ev.feature_id;
  j["decision"] = ev.decision == Decision::kMatched ? "matched" : "new_track";
  j["track_id"] = ev.track_id;
  j["local_track"] = ev.local_track ? json(*ev.local_track) : json(nullptr);
  j["score"] = ev.score ? json(*ev.score) : json(nullptr);
  j["correct"] = ev.correct ? json(*ev.correct) : json(nullptr);
  return j;
}

inline void write_events(const std::filesystem::path& path, const std::vector<AssociationEvent>& events) {
  auto out = open_out(path);
  for (const auto& ev : events) out << to_json(ev).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<AssociationEvent> read_events(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<AssociationEvent> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + " line " + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      AssociationEvent ev;
      ev.time = j.at("time").get<std::int64_t>();
      ev.camera = j.at("camera").get<int>();
      ev.frame = j.at("frame").get<std::int64_t>();
      ev.feature_id = j.at("feature_id").get<std::int64_t>();
      const auto decision = j.at("decision").get<std::string>();
      if (decision == "matched") {
        ev.decision = Decision::kMatched;
      } else if (decision == "new_track") {
        ev.decision = Decision::kNewTrack;
      } else {
        throw ValidationError(where + ": unknown decision '" + decision + "'");
      }
      ev.track_id = j.at("track_id").get<int>();
      if (j.contains("local_track") && !j["local_track"].is_null()) ev.local_track = j["local_track"].get<int>();
      if (j.contains("score") && !j["score"].is_null()) ev.score = j["score"].get<double>();
      if (j.contains("correct") && !j["correct"].is_null()) ev.correct = j["correct"].get<bool>();
      out.push_back(ev);
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------- model

namespace detail {

inline json vec_json(const nn::Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline json mat_json(const nn::Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
  }
  return rows;
}

inline nn::Vector json_vec(const json& j, Eigen::Index expect, const std::string& field) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != expect) {
    throw ValidationError("model field '" + field + "': expected " + std::to_string(expect) + " values");
  }
  return Eigen::Map<const nn::Vector>(v.data(), expect);
}

inline nn::Matrix json_mat(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& field) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw ValidationError("model field '" + field + "': expected " + std::to_string(rows) + " rows");
  }
  nn::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = json_vec(j[static_cast<std::size_t>(r)], cols, field).transpose();
  return m;
}

inline json grads_json(const CanGradients& g) {
  json layers = json::array();
  for (const auto& l : g.evalnet.layers) {
    json lj{{"W", mat_json(l.weight)}, {"b", vec_json(l.bias)}};
    if (l.bn_gamma.size() > 0) {
      lj["gamma"] = vec_json(l.bn_gamma);
      lj["beta"] = vec_json(l.bn_beta);
    }
    layers.push_back(lj);
  }
  return {{"layers", layers}, {"W_c", mat_json(g.head_weight)}, {"b_c", vec_json(g.head_bias)}};
}

}  // namespace detail

struct TrainingState {
  OptimizerState optimizer;
  std::uint64_t seed = 0;
};

// `state` adds the optimizer block used by --resume.
inline json model_to_json(const CanModel& model, const TrainingState* state = nullptr) {
  json j;
  j["schema_version"] = kModelSchemaVersion;
  j["dims"] = model.evalnet.dims();
  j["meta"] = {{"frame_width", model.meta.frame_width},
               {"frame_height", model.meta.frame_height},
               {"num_cameras", model.meta.num_cameras}};
  json layers = json::array();
  for (const auto& l : model.evalnet.layers) {
    json lj{{"W", detail::mat_json(l.weight)}, {"b", detail::vec_json(l.bias)}};
    if (l.has_batch_norm()) {
      lj["gamma"] = detail::vec_json(l.bn_gamma);
      lj["beta"] = detail::vec_json(l.bn_beta);
      lj["running_mean"] = detail::vec_json(l.bn_running_mean);
      lj["running_var"] = detail::vec_json(l.bn_running_var);
    }
    layers.push_back(lj);
  }
  j["layers"] = layers;
  j["classifier"] = {{"W_c", detail::mat_json(model.head.weight)}, {"b_c", detail::vec_json(model.head.bias)}};
  if (state) {
    j["optimizer"] = {{"step", state->optimizer.step},
                      {"seed", state->seed},
                      {"velocity", detail::grads_json(state->optimizer.velocity)}};
  }
  return j;
}

struct LoadedModel {
  CanModel model;
  std::optional<TrainingState> state;
};

inline LoadedModel model_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != kModelSchemaVersion) {
      throw ValidationError("model field 'schema_version': unsupported version");
    }
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != nn::kNumLayers + 1 || dims.back() != 1) {
      throw ValidationError("model field 'dims': expected [in, h1, h2, h3, 1]");
    }
    LoadedModel lm;
    auto& m = lm.model;
    const auto& meta = j.at("meta");
    m.meta = {meta.at("frame_width").get<double>(), meta.at("frame_height").get<double>(),
              meta.at("num_cameras").get<int>()};
    m.meta.validate();
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != nn::kNumLayers) throw ValidationError("model field 'layers': expected 4 layers");
    for (std::size_t i = 0; i < nn::kNumLayers; ++i) {
      const auto in = static_cast<Eigen::Index>(dims[i]);
      const auto out = static_cast<Eigen::Index>(dims[i + 1]);
      const auto& lj = layers[i];
      const std::string f = "layers[" + std::to_string(i) + "]";
      nn::LayerParams l;
      l.weight = detail::json_mat(lj.at("W"), out, in, f + ".W");
      l.bias = detail::json_vec(lj.at("b"), out, f + ".b");
      if (i + 1 < nn::kNumLayers) {
        l.bn_gamma = detail::json_vec(lj.at("gamma"), out, f + ".gamma");
        l.bn_beta = detail::json_vec(lj.at("beta"), out, f + ".beta");
        l.bn_running_mean = detail::json_vec(lj.at("running_mean"), out, f + ".running_mean");
        l.bn_running_var = detail::json_vec(lj.at("running_var"), out, f + ".running_var");
      }
      m.evalnet.layers.push_back(std::move(l));
    }
    nn::validate(m.evalnet);
    const auto& head = j.at("classifier");
    const auto classes = static_cast<Eigen::Index>(head.at("b_c").size());
    const auto d = static_cast<Eigen::Index>(dims[0]) - static_cast<Eigen::Index>(kPairedMetaWidth);
    if (d <= 0) throw ValidationError("model field 'dims': input narrower than the metadata row");
    m.head.weight = detail::json_mat(head.at("W_c"), classes, d, "classifier.W_c");
    m.head.bias = detail::json_vec(head.at("b_c"), classes, "classifier.b_c");
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      TrainingState st;
      st.optimizer = make_optimizer_state(m);
      st.optimizer.step = o.at("step").get<std::uint64_t>();
      st.seed = o.at("seed").get<std::uint64_t>();
      const auto& v = o.at("velocity");
      for (std::size_t i = 0; i < nn::kNumLayers; ++i) {
        const auto& lj = v.at("layers")[i];
        auto& lg = st.optimizer.velocity.evalnet.layers[i];
        const std::string f = "optimizer.velocity.layers[" + std::to_string(i) + "]";
        lg.weight = detail::json_mat(lj.at("W"), lg.weight.rows(), lg.weight.cols(), f + ".W");
        lg.bias = detail::json_vec(lj.at("b"), lg.bias.size(), f + ".b");
        if (lg.bn_gamma.size() > 0) {
          lg.bn_gamma = detail::json_vec(lj.at("gamma"), lg.bn_gamma.size(), f + ".gamma");
          lg.bn_beta = detail::json_vec(lj.at("beta"), lg.bn_beta.size(), f + ".beta");
        }
      }
      st.optimizer.velocity.head_weight = detail::json_mat(v.at("W_c"), classes, d, "optimizer.velocity.W_c");
      st.optimizer.velocity.head_bias = detail::json_vec(v.at("b_c"), classes, "optimizer.velocity.b_c");
      lm.state = std::move(st);
    }
    return lm;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model file: ") + e.what());
  }
}

inline void save_model(const std::filesystem::path& path, const CanModel& model, const TrainingState* state = nullptr) {
  auto out = open_out(path);
  out << model_to_json(model, state).dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  auto in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

// ---------------------------------------------------------------- world config

namespace detail {

inline json box_json(const BBox& b) { return {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; }

template <class T>
void read_field(const json& j, const char* name, T& into) {
  if (!j.contains(name)) return;
  try {
    into = j.at(name).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("world config field '") + name + "': wrong type");
  }
}

inline BBox json_box(const json& j, const std::string& field) {
  try {
    return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(), j.at("h").get<double>()};
  } catch (const json::exception&) {
    throw ValidationError("world config field '" + field + "': expected {x, y, w, h}");
  }
}

}  // namespace detail

inline json world_to_json(const synth::WorldConfig& c) {
  json j{{"num_cameras", c.num_cameras},
         {"frame_width", c.frame_width},
         {"frame_height", c.frame_height},
         {"fps", c.fps},
         {"num_frames", c.num_frames},
         {"num_identities", c.num_identities},
         {"embedding_dim", c.embedding_dim},
         {"sigma", c.sigma},
         {"beta", c.beta},
         {"occlusion_prob", c.occlusion_prob},
         {"quality_exponent", c.quality_exponent},
         {"reference_height", c.reference_height},
         {"seed", c.seed},
         {"disjoint_lanes", c.disjoint_lanes},
         {"segment_min", c.segment_min},
         {"segment_max", c.segment_max},
         {"gap_min", c.gap_min},
         {"gap_max", c.gap_max},
         {"min_height", c.min_height},
         {"max_height", c.max_height}};
  json paths = json::array();
  for (const auto& p : c.paths) {
    json segs = json::array();
    for (const auto& s : p.segments) {
      segs.push_back({{"camera", s.camera},
                      {"entry_frame", s.entry_frame},
                      {"exit_frame", s.exit_frame},
                      {"start", detail::box_json(s.start)},
                      {"end", detail::box_json(s.end)}});
    }
    paths.push_back({{"identity", p.identity}, {"segments", segs}});
  }
  j["paths"] = paths;
  return j;
}

inline synth::WorldConfig world_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("world config: expected a JSON object");
  static const std::vector<std::string> known{
      "num_cameras", "frame_width", "frame_height", "fps", "num_frames", "num_identities", "embedding_dim",
      "sigma", "beta", "occlusion_prob", "quality_exponent", "reference_height", "seed", "disjoint_lanes",
      "segment_min", "segment_max", "gap_min", "gap_max", "min_height", "max_height", "paths"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("world config field '" + key + "': unknown field");
    }
  }
  synth::WorldConfig c;
  detail::read_field(j, "num_cameras", c.num_cameras);
  detail::read_field(j, "frame_width", c.frame_width);
  detail::read_field(j, "frame_height", c.frame_height);
  detail::read_field(j, "fps", c.fps);
  detail::read_field(j, "num_frames", c.num_frames);
  detail::read_field(j, "num_identities", c.num_identities);
  detail::read_field(j, "embedding_dim", c.embedding_dim);
  detail::read_field(j, "sigma", c.sigma);
  detail::read_field(j, "beta", c.beta);
  detail::read_field(j, "occlusion_prob", c.occlusion_prob);
  detail::read_field(j, "quality_exponent", c.quality_exponent);
  detail::read_field(j, "reference_height", c.reference_height);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "disjoint_lanes", c.disjoint_lanes);
  detail::read_field(j, "segment_min", c.segment_min);
  detail::read_field(j, "segment_max", c.segment_max);
  detail::read_field(j, "gap_min", c.gap_min);
  detail::read_field(j, "gap_max", c.gap_max);
  detail::read_field(j, "min_height", c.min_height);
  detail::read_field(j, "max_height", c.max_height);
  if (j.contains("paths")) {
    if (!j["paths"].is_array()) throw ValidationError("world config field 'paths': expected an array");
    for (std::size_t i = 0; i < j["paths"].size(); ++i) {
      const auto& pj = j["paths"][i];
      const std::string f = "paths[" + std::to_string(i) + "]";
      synth::IdentityPath p;
      try {
        p.identity = pj.at("identity").get<int>();
        for (std::size_t s = 0; s < pj.at("segments").size(); ++s) {
          const auto& sj = pj["segments"][s];
          const std::string sf = f + ".segments[" + std::to_string(s) + "]";
          synth::PathSegment seg;
          seg.camera = sj.at("camera").get<int>();
          seg.entry_frame = sj.at("entry_frame").get<std::int64_t>();
          seg.exit_frame = sj.at("exit_frame").get<std::int64_t>();
          seg.start = detail::json_box(sj.at("start"), sf + ".start");
          seg.end = detail::json_box(sj.at("end"), sf + ".end");
          p.segments.push_back(seg);
        }
      } catch (const json::exception& e) {
        throw ValidationError("world config field '" + f + "': " + e.what());
      }
      c.paths.push_back(std::move(p));
    }
  }
  synth::validate(c);
  return c;
}

inline synth::WorldConfig load_world(const std::filesystem::path& path) {
  auto in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return world_from_json(j);
}

// ---------------------------------------------------------------- scenario export

struct ScenarioFiles {
  std::filesystem::path detections;
  std::filesystem::path features;
  std::filesystem::path ground_truth;
};

inline ScenarioFiles scenario_paths(const std::filesystem::path& dir) {
  return {dir / "detections.csv", dir / "features.canf", dir / "ground_truth.csv"};
}

// Writes detections (tracker input, no identities), CANF features and the
// ground-truth CSV.
inline ScenarioFiles export_scenario(const synth::SyntheticDataset& ds, const std::filesystem::path& dir) {
  const auto files = scenario_paths(dir);
  std::vector<FeatureVector> feats;
  feats.reserve(ds.detections.size());
  for (const auto& d : ds.detections) feats.push_back(d.feature);
  write_detections(files.detections, ds.detections, false);
  write_canf(files.features, feats);
  write_detections(files.ground_truth, ds.detections, true);
  return files;
}

// Labeled detections (features resolved) from an exported scenario.
inline std::vector<Detection> load_labeled_detections(const std::filesystem::path& ground_truth,
                                                      const std::filesystem::path& features) {
  const auto feats = read_features(features);
  return read_detections(ground_truth, &feats, true);
}

// ---------------------------------------------------------------- report

inline constexpr int kReportSchemaVersion = 1;

namespace detail {

inline json id_json(const IdMeasures& m) {
  return {{"idp", m.idp}, {"idr", m.idr}, {"idf1", m.idf1}, {"idtp", m.idtp}, {"idfp", m.idfp}, {"idfn", m.idfn}};
}

}  // namespace detail

inline json report_to_json(const MetricsReport& r, std::uint64_t seed, const std::string& mode) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["seed"] = seed;
  j["mode"] = mode;
  j["ie"] = r.ie ? json(*r.ie) : json(nullptr);
  json steps = json::array();
  for (const auto& s : r.ie_steps) {
    steps.push_back({{"time", s.time}, {"misassociations", s.misassociations}, {"detections", s.detections}});
  }
  j["ie_steps"] = steps;
  j["ict"] = detail::id_json(r.id);
  j["sct"] = detail::id_json(r.sct_id);
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["mota"] = r.mota;
  j["mcta"] = r.mcta;
  const auto& c = r.counts;
  j["counts"] = {{"m_s", c.m_s}, {"tp_s", c.tp_s}, {"m_i", c.m_i}, {"tp_i", c.tp_i},
                 {"fragmentations", c.fragmentations}, {"fn", c.fn}, {"fp", c.fp}, {"tp", c.tp},
                 {"num_gt", c.num_gt}, {"num_hyp", c.num_hyp}};
  return j;
}

inline json load_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void save_json(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace cantrack::io
