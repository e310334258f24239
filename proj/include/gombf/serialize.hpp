#pragma once

// Versioned binary model files.
//
// Layout, all integers little-endian, doubles as little-endian IEEE-754 bits:
//
//   offset  size  field
//   0       8     magic "GOMBFMDL"
//   8       4     u32 format version
//   12      4     u32 byte-order mark 0x01020304
//   16      4     u32 file kind (1 toy shape model, 2 cascade)
//   20      4     u32 section count
//   24      ...   sections
//
// Each section is a 16-byte NUL-padded name, a u64 payload length, the
// payload, and a u64 FNV-1a hash of the payload. Matrices are stored as u64
// rows, u64 cols and column-major doubles; strings as u32 length and bytes.
//
// Toy model files hold sections "toyspec", "shape", "prior". Cascade files
// hold "header", "shape", "bank", "prior" and one "stage N" section per stage.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gombf/cascade.hpp"
#include "gombf/core.hpp"
#include "gombf/io.hpp"
#include "gombf/synthscene.hpp"

namespace gombf {

inline constexpr char kModelMagic[8] = {'G', 'O', 'M', 'B', 'F', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr std::uint32_t kByteOrderMark = 0x01020304u;
inline constexpr std::size_t kSectionNameBytes = 16;

enum class ModelFileKind : std::uint32_t { kToyShape = 1, kCascade = 2 };

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void i32(int v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { buf_ += s; }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  template <typename Derived>
  void matrix(const Eigen::MatrixBase<Derived>& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
  }
  void ints(const std::vector<int>& v) {
    u64(v.size());
    for (int x : v) i32(x);
  }

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string section)
      : buf_(buf), section_(std::move(section)) {}

  [[noreturn]] void corrupt(const std::string& what) const {
    fail(ErrorKind::kIntegrity, "model file section '" + section_ + "': " + what);
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  int i32() { return static_cast<int>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return raw(u32()); }
  Mat matrix() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (rows > remaining() / 8 || (rows > 0 && cols > remaining() / 8 / rows))
      corrupt("matrix dimensions exceed the section size");
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = f64();
    return m;
  }
  template <int Rows>
  Eigen::Matrix<double, Rows, Eigen::Dynamic> fixed_rows() {
    Mat m = matrix();
    if (m.rows() != Rows) corrupt("expected a matrix with " + std::to_string(Rows) + " rows");
    return m;
  }
  std::vector<int> ints() {
    const std::uint64_t n = u64();
    if (n > remaining() / 4) corrupt("index list longer than the section");
    std::vector<int> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = i32();
    return v;
  }

  std::size_t remaining() const { return buf_.size() - pos_; }
  void expect_end() const {
    if (pos_ != buf_.size()) corrupt("unexpected trailing bytes");
  }
  const std::string& section() const { return section_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) corrupt("truncated payload");
  }

  const std::string& buf_;
  std::string section_;
  std::size_t pos_ = 0;
};

struct Section {
  std::string name;
  std::string payload;
};

inline std::string encode_container(ModelFileKind kind, const std::vector<Section>& sections) {
  ByteWriter w;
  w.raw(std::string(kModelMagic, sizeof kModelMagic));
  w.u32(kModelVersion);
  w.u32(kByteOrderMark);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    if (s.name.size() >= kSectionNameBytes) fail(ErrorKind::kConfig, "section name too long");
    std::string name = s.name;
    name.resize(kSectionNameBytes, '\0');
    w.raw(name);
    w.u64(s.payload.size());
    w.raw(s.payload);
    w.u64(fnv1a(s.payload));
  }
  return w.take();
}

inline std::vector<Section> decode_container(const std::string& bytes, ModelFileKind kind) {
  ByteReader r(bytes, "preamble");
  if (r.remaining() < sizeof kModelMagic ||
      r.raw(sizeof kModelMagic) != std::string(kModelMagic, sizeof kModelMagic))
    r.corrupt("bad magic, not a model file");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion)
    r.corrupt("unsupported format version " + std::to_string(version));
  if (r.u32() != kByteOrderMark) r.corrupt("unexpected byte-order mark");
  const std::uint32_t file_kind = r.u32();
  if (file_kind != static_cast<std::uint32_t>(kind))
    r.corrupt("file kind " + std::to_string(file_kind) + " where " +
              std::to_string(static_cast<std::uint32_t>(kind)) + " was expected");
  const std::uint32_t count = r.u32();
  std::vector<Section> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (r.remaining() < kSectionNameBytes)
      fail(ErrorKind::kIntegrity,
           "model file section " + std::to_string(i + 1) + " of " + std::to_string(count) +
               (out.empty() ? std::string(" (first)") : " (after '" + out.back().name + "')") +
               ": missing, file truncated");
    std::string name = r.raw(kSectionNameBytes);
    name.resize(std::strlen(name.c_str()));
    if (r.remaining() < 8) fail(ErrorKind::kIntegrity, "model file section '" + name + "': truncated length");
    const std::uint64_t length = r.u64();
    if (length > r.remaining() || r.remaining() - length < 8)
      fail(ErrorKind::kIntegrity, "model file section '" + name + "': truncated payload");
    std::string payload = r.raw(static_cast<std::size_t>(length));
    const std::uint64_t hash = r.u64();
    if (hash != fnv1a(payload))
      fail(ErrorKind::kIntegrity, "model file section '" + name + "': checksum mismatch");
    out.push_back({std::move(name), std::move(payload)});
  }
  if (r.remaining() != 0) fail(ErrorKind::kIntegrity, "model file has trailing bytes after the last section");
  return out;
}

inline const Section& expect_section(const std::vector<Section>& sections, std::size_t index,
                                     const std::string& name) {
  if (index >= sections.size())
    fail(ErrorKind::kIntegrity, "model file section '" + name + "': missing");
  if (sections[index].name != name)
    fail(ErrorKind::kIntegrity, "model file section '" + name + "': found '" +
                                    sections[index].name + "' in its place");
  return sections[index];
}

/// Runs `decode` on a section and reports any failure as an integrity error
/// naming the section.
template <typename Fn>
auto decode_section(const Section& s, Fn&& decode) {
  ByteReader r(s.payload, s.name);
  try {
    auto value = decode(r);
    r.expect_end();
    return value;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIntegrity) throw;
    fail(ErrorKind::kIntegrity, "model file section '" + s.name + "': " + e.what());
  }
}

// Payload codecs --------------------------------------------------------------

inline void put_shape(ByteWriter& w, const ParametricShapeModel& m) {
  w.matrix(m.identity_basis());
  w.matrix(m.expression_basis());
  w.ints(m.landmark_indices());
  w.i32(m.interocular_pair()[0]);
  w.i32(m.interocular_pair()[1]);
}

inline ParametricShapeModel get_shape(ByteReader& r) {
  Mat id = r.matrix();
  Mat ex = r.matrix();
  std::vector<int> lm = r.ints();
  const int a = r.i32();
  const int b = r.i32();
  return ParametricShapeModel(std::move(id), std::move(ex), std::move(lm), {a, b});
}

inline void put_indexer(ByteWriter& w, const FeatureIndexer& ix) {
  w.matrix(ix.reference());
  w.u64(ix.triangles().size());
  for (const auto& t : ix.triangles())
    for (int v : t) w.i32(v);
  w.ints(ix.point_triangle());
  w.matrix(ix.barycentric());
}

inline FeatureIndexer get_indexer(ByteReader& r) {
  Points2 reference = r.fixed_rows<2>();
  const std::uint64_t nt = r.u64();
  if (nt > r.remaining() / 12) r.corrupt("triangle count exceeds the section");
  std::vector<Triangle> tris(static_cast<std::size_t>(nt));
  for (auto& t : tris)
    for (int& v : t) v = r.i32();
  std::vector<int> owner = r.ints();
  Points3 bary = r.fixed_rows<3>();
  return FeatureIndexer(std::move(reference), std::move(tris), std::move(owner), std::move(bary));
}

inline void put_regressor(ByteWriter& w, const GoMBFModel& g) {
  const auto& groups = g.layout().groups();
  w.u32(static_cast<std::uint32_t>(groups.size()));
  for (const auto& grp : groups) {
    w.str(grp.name);
    w.i32(grp.offset);
    w.i32(grp.width);
    w.i32(grp.ferns);
  }
  w.u32(g.is_fused() ? 1u : 0u);
  w.i32(g.depth());
  w.i32(g.appearance_length());
  for (const auto& bf : g.group_models())
    for (const auto& f : bf.ferns()) {
      for (const auto& t : f.tests()) {
        w.i32(t.i);
        w.i32(t.j);
        w.f64(t.threshold);
      }
      w.matrix(f.leaves());
    }
  w.matrix(g.fused_leaves());
}

inline GoMBFModel get_regressor(ByteReader& r) {
  const std::uint32_t ng = r.u32();
  if (ng > r.remaining() / 16) r.corrupt("group count exceeds the section");
  std::vector<ModalityGroup> groups(ng);
  for (auto& grp : groups) {
    grp.name = r.str();
    grp.offset = r.i32();
    grp.width = r.i32();
    grp.ferns = r.i32();
  }
  ModalityLayout layout(groups);
  const std::uint32_t fused = r.u32();
  if (fused > 1) r.corrupt("fused flag must be 0 or 1");
  const int depth = r.i32();
  const int m = r.i32();
  if (depth < 1 || depth > 16) r.corrupt("fern depth " + std::to_string(depth) + " out of range");
  std::vector<BoostedFerns> models;
  for (const auto& grp : layout.groups()) {
    if (static_cast<std::uint64_t>(grp.ferns) > r.remaining()) r.corrupt("fern count exceeds the section");
    std::vector<Fern> ferns;
    ferns.reserve(static_cast<std::size_t>(grp.ferns));
    for (int k = 0; k < grp.ferns; ++k) {
      std::vector<SplitTest> tests(static_cast<std::size_t>(depth));
      for (auto& t : tests) {
        t.i = r.i32();
        t.j = r.i32();
        t.threshold = r.f64();
      }
      Mat leaves = r.matrix();
      if (leaves.rows() != grp.width)
        r.corrupt("group '" + grp.name + "' leaf rows do not match its width");
      ferns.emplace_back(std::move(tests), std::move(leaves), m);
    }
    models.emplace_back(std::move(ferns));
  }
  Mat w = r.matrix();
  return GoMBFModel(std::move(layout), std::move(models), std::move(w), fused == 1);
}

}  // namespace detail

// Toy shape model files ---------------------------------------------------------

inline std::string encode_toy_model(const ToyModel& toy) {
  detail::ByteWriter spec;
  const ToyModelSpec& s = toy.spec;
  spec.i32(s.vertices);
  spec.i32(s.identity_rank);
  spec.i32(s.expression_rank);
  spec.i32(s.landmarks);
  spec.f64(s.smoothness);
  spec.f64(s.face_width);
  spec.f64(s.identity_scale);
  spec.f64(s.identity_decay);
  spec.f64(s.expression_scale);
  spec.u64(s.seed);
  detail::ByteWriter shape;
  detail::put_shape(shape, toy.model);
  detail::ByteWriter prior;
  prior.matrix(toy.identity_sigma);
  return detail::encode_container(ModelFileKind::kToyShape,
                                  {{"toyspec", spec.take()}, {"shape", shape.take()}, {"prior", prior.take()}});
}

inline ToyModel decode_toy_model(const std::string& bytes) {
  const auto sections = detail::decode_container(bytes, ModelFileKind::kToyShape);
  ToyModel toy;
  toy.spec = detail::decode_section(detail::expect_section(sections, 0, "toyspec"),
                                    [](detail::ByteReader& r) {
                                      ToyModelSpec s;
                                      s.vertices = r.i32();
                                      s.identity_rank = r.i32();
                                      s.expression_rank = r.i32();
                                      s.landmarks = r.i32();
                                      s.smoothness = r.f64();
                                      s.face_width = r.f64();
                                      s.identity_scale = r.f64();
                                      s.identity_decay = r.f64();
                                      s.expression_scale = r.f64();
                                      s.seed = r.u64();
                                      return s;
                                    });
  toy.model = detail::decode_section(detail::expect_section(sections, 1, "shape"), detail::get_shape);
  toy.identity_sigma = detail::decode_section(detail::expect_section(sections, 2, "prior"),
                                              [&](detail::ByteReader& r) {
                                                Mat m = r.matrix();
                                                if (m.cols() != 1 || m.rows() != toy.model.identity_rank())
                                                  r.corrupt("prior must be an m_id x 1 column");
                                                return Vec(m.col(0));
                                              });
  if (sections.size() != 3) fail(ErrorKind::kIntegrity, "toy model file has unexpected extra sections");
  return toy;
}

inline void save_toy_model(const ToyModel& toy, const std::filesystem::path& path) {
  write_file_atomic(path, encode_toy_model(toy));
}

inline ToyModel load_toy_model(const std::filesystem::path& path) {
  try {
    return decode_toy_model(read_file(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

// Cascade model files -----------------------------------------------------------

inline std::string encode_cascade(const CascadeModel& model) {
  std::vector<detail::Section> sections;
  detail::ByteWriter head;
  head.u32(model.mode == RegressorMode::kGoMBF ? 0u : 1u);
  head.i32(model.initializations);
  head.u32(static_cast<std::uint32_t>(model.stages.size()));
  head.i32(model.shape.vertex_count());
  head.i32(model.shape.identity_rank());
  head.i32(model.shape.expression_rank());
  head.i32(model.shape.landmark_count());
  sections.push_back({"header", head.take()});
  detail::ByteWriter shape;
  detail::put_shape(shape, model.shape);
  sections.push_back({"shape", shape.take()});
  detail::ByteWriter bank;
  bank.matrix(model.bank.expressions());
  sections.push_back({"bank", bank.take()});
  detail::ByteWriter prior;
  prior.matrix(model.identity_sigma);
  sections.push_back({"prior", prior.take()});
  for (std::size_t t = 0; t < model.stages.size(); ++t) {
    detail::ByteWriter st;
    detail::put_indexer(st, model.stages[t].indexer);
    detail::put_regressor(st, model.stages[t].regressor);
    sections.push_back({"stage " + std::to_string(t + 1), st.take()});
  }
  return detail::encode_container(ModelFileKind::kCascade, sections);
}

inline CascadeModel decode_cascade(const std::string& bytes) {
  const auto sections = detail::decode_container(bytes, ModelFileKind::kCascade);
  struct Header {
    RegressorMode mode;
    int initializations;
    std::uint32_t stages;
    std::array<int, 4> dims;
  };
  const Header h = detail::decode_section(
      detail::expect_section(sections, 0, "header"), [](detail::ByteReader& r) {
        Header out{};
        const std::uint32_t mode = r.u32();
        if (mode > 1) r.corrupt("unknown regressor mode " + std::to_string(mode));
        out.mode = mode == 0 ? RegressorMode::kGoMBF : RegressorMode::kMonolithic;
        out.initializations = r.i32();
        if (out.initializations < 1) r.corrupt("initialization count must be positive");
        out.stages = r.u32();
        for (int& d : out.dims) d = r.i32();
        return out;
      });
  if (sections.size() != 4 + static_cast<std::size_t>(h.stages))
    fail(ErrorKind::kIntegrity, "model file section 'header': declares " +
                                    std::to_string(h.stages) + " stages but the file holds " +
                                    std::to_string(sections.size() < 4 ? 0 : sections.size() - 4));
  CascadeModel model;
  model.mode = h.mode;
  model.initializations = h.initializations;
  model.shape = detail::decode_section(detail::expect_section(sections, 1, "shape"), [&](detail::ByteReader& r) {
    ParametricShapeModel s = detail::get_shape(r);
    const std::array<int, 4> dims{s.vertex_count(), s.identity_rank(), s.expression_rank(),
                                  s.landmark_count()};
    if (dims != h.dims) r.corrupt("shape dimensions disagree with the header");
    return s;
  });
  model.bank = detail::decode_section(detail::expect_section(sections, 2, "bank"), [&](detail::ByteReader& r) {
    Mat e = r.matrix();
    if (e.rows() != model.shape.expression_rank() || e.cols() < 1)
      r.corrupt("bank must hold at least one m_exp-length expression");
    return ExpressionBank(model.shape, std::move(e));
  });
  model.identity_sigma = detail::decode_section(detail::expect_section(sections, 3, "prior"), [&](detail::ByteReader& r) {
    Mat m = r.matrix();
    if (m.size() != 0 && (m.cols() != 1 || m.rows() != model.shape.identity_rank()))
      r.corrupt("prior must be empty or an m_id x 1 column");
    return Vec(m.reshaped());
  });
  const MotionLayout motion = model.shape.motion_layout();
  for (std::uint32_t t = 0; t < h.stages; ++t) {
    const std::string name = "stage " + std::to_string(t + 1);
    model.stages.push_back(detail::decode_section(
        detail::expect_section(sections, 4 + t, name), [&](detail::ByteReader& r) {
          CascadeStage st;
          st.indexer = detail::get_indexer(r);
          st.regressor = detail::get_regressor(r);
          if (st.indexer.landmark_count() != motion.n_landmarks)
            r.corrupt("indexer landmark count disagrees with the shape model");
          if (st.regressor.layout().dim() != motion.dim())
            r.corrupt("regressor output dim disagrees with the motion layout");
          if (st.regressor.appearance_length() != st.indexer.size())
            r.corrupt("regressor input length disagrees with the feature count");
          return st;
        }));
  }
  return model;
}

inline void save_cascade(const CascadeModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_cascade(model));
}

inline CascadeModel load_cascade(const std::filesystem::path& path) {
  try {
    return decode_cascade(read_file(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

}  // namespace gombf
