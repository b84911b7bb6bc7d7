#include "metaprep/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace metaprep {

namespace {

constexpr const char* kHeader = "METAPREP-CKPT v1";

void put_bytes(std::string& out, const void* data, size_t n) {
  out.append(static_cast<const char*>(data), n);
}

void put_u32(std::string& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  put_bytes(out, b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  put_bytes(out, b, 8);
}

void put_i64(std::string& out, std::int64_t v) { put_u64(out, static_cast<std::uint64_t>(v)); }

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

double u64_to_f64(std::uint64_t bits) {
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::uint64_t f64_to_u64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  return bits;
}

class Reader {
 public:
  Reader(const std::string& data, size_t at, size_t end, const std::string& path)
      : data_(data), at_(at), end_(end), path_(path) {}

  bool done() const { return at_ >= end_; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[at_ + i])) << (8 * i);
    at_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[at_ + i])) << (8 * i);
    at_ += 8;
    return v;
  }

  std::string bytes(size_t n) {
    need(n);
    std::string s = data_.substr(at_, n);
    at_ += n;
    return s;
  }

 private:
  void need(size_t n) {
    if (at_ + n > end_) throw IoError("checkpoint '" + path_ + "': truncated record");
  }

  const std::string& data_;
  size_t at_;
  size_t end_;
  std::string path_;
};

void append_record(std::string& out, const std::string& name, const Shape& shape, const double* values,
                   Index count) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  put_bytes(out, name.data(), name.size());
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (Index d : shape) put_i64(out, d);
  for (Index i = 0; i < count; ++i) put_f64(out, values[i]);
}

void append_scalar_record(std::string& out, const std::string& name, double value) {
  append_record(out, name, Shape{1}, &value, 1);
}

}  // namespace

void save_checkpoint(const std::string& path, const ad::ParamSet& params, const TrainState* state) {
  std::string body;
  for (const auto& [name, t] : params) {
    if (name.rfind("__", 0) == 0) throw ValueError("checkpoint: parameter name '" + name + "' is reserved");
    append_record(body, name, t.shape(), t.data(), t.size());
  }
  if (state != nullptr) {
    append_scalar_record(body, "__state.step", static_cast<double>(state->step));
    append_scalar_record(body, "__state.budget", static_cast<double>(state->budget_steps));
    append_scalar_record(body, "__state.k", static_cast<double>(state->k));
    append_scalar_record(body, "__state.rng.key", u64_to_f64(state->data_rng_key));
    append_scalar_record(body, "__state.rng.pos", u64_to_f64(state->data_rng_pos));
    append_scalar_record(body, "__state.opt.step", static_cast<double>(state->opt_step));
    for (const auto& [name, t] : state->adam_m) append_record(body, "__opt.m." + name, t.shape(), t.data(), t.size());
    for (const auto& [name, t] : state->adam_v) append_record(body, "__opt.v." + name, t.shape(), t.data(), t.size());
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  out << kHeader << "\n";
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  std::string checksum;
  put_u64(checksum, static_cast<std::uint64_t>(body.size()));
  out.write(checksum.data(), 8);
  if (!out) throw IoError("checkpoint: write to '" + path + "' failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string data = buf.str();

  const std::string header = std::string(kHeader) + "\n";
  if (data.size() < header.size() + 8 || data.compare(0, header.size(), header) != 0) {
    throw IoError("checkpoint '" + path + "': bad header (expected " + std::string(kHeader) + ")");
  }
  size_t body_begin = header.size();
  size_t body_end = data.size() - 8;
  {
    Reader tail(data, body_end, data.size(), path);
    std::uint64_t recorded = tail.u64();
    if (recorded != body_end - body_begin) {
      throw IoError("checkpoint '" + path + "': length checksum mismatch (" + std::to_string(recorded) +
                    " recorded, " + std::to_string(body_end - body_begin) + " actual)");
    }
  }

  LoadedCheckpoint result;
  TrainState state;
  bool any_state = false;
  Reader r(data, body_begin, body_end, path);
  while (!r.done()) {
    std::string name = r.bytes(r.u32());
    std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(r.u64()));
    Index count = numel(shape);
    Storage values(count);
    for (Index i = 0; i < count; ++i) values(i) = u64_to_f64(r.u64());

    if (name.rfind("__", 0) != 0) {
      result.params.insert(name, ad::Tensor(std::move(shape), std::move(values)));
      continue;
    }
    any_state = true;
    if (name == "__state.step") {
      state.step = static_cast<std::int64_t>(values(0));
    } else if (name == "__state.budget") {
      state.budget_steps = static_cast<std::int64_t>(values(0));
    } else if (name == "__state.k") {
      state.k = static_cast<std::int64_t>(values(0));
    } else if (name == "__state.rng.key") {
      state.data_rng_key = f64_to_u64(values(0));
    } else if (name == "__state.rng.pos") {
      state.data_rng_pos = f64_to_u64(values(0));
    } else if (name == "__state.opt.step") {
      state.opt_step = static_cast<std::int64_t>(values(0));
    } else if (name.rfind("__opt.m.", 0) == 0) {
      state.adam_m.insert(name.substr(8), ad::Tensor(std::move(shape), std::move(values)));
    } else if (name.rfind("__opt.v.", 0) == 0) {
      state.adam_v.insert(name.substr(8), ad::Tensor(std::move(shape), std::move(values)));
    } else {
      throw IoError("checkpoint '" + path + "': unknown state record '" + name + "'");
    }
  }
  if (any_state) result.state = std::move(state);
  return result;
}

}  // namespace metaprep
