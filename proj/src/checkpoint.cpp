#include "protst/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "protst/digest.hpp"

namespace protst {

namespace {

constexpr char kMagic[8] = {'P', 'R', 'O', 'T', 'S', 'T', 'C', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? "," : "") + items[i];
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(item);
  return out;
}

std::string shape_field(const ad::Shape& shape) {
  if (shape.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

ad::Shape parse_shape(const std::string& s) {
  ad::Shape shape;
  if (s == "-") return shape;
  std::istringstream is(s);
  std::string dim;
  while (std::getline(is, dim, 'x')) shape.push_back(std::stoul(dim));
  return shape;
}

std::string metadata_text(const ParameterCheckpoint& c) {
  std::ostringstream os;
  os << backbone_config_text(c.config);
  os << "node=" << c.node_id << "\n";
  os << "lineage=" << join(c.lineage) << "\n";
  os << "lineage_kinds=" << join(c.lineage_kinds) << "\n";
  os << "fingerprint=" << c.fingerprint << "\n";
  os << "head_kind=" << c.head_kind << "\n";
  os << "head.malware_families=" << c.head_config.malware_families << "\n";
  os << "head.name_vocab=" << c.head_config.name_vocab << "\n";
  os << "head.margin=" << std::bit_cast<std::uint64_t>(c.head_config.margin) << "\n";
  os << "head.mlp_activation=" << activation_name(c.head_config.mlp_activation) << "\n";
  for (const auto& [name, t] : c.params.entries()) os << "param=" << name << ":" << shape_field(t.shape()) << "\n";
  return os.str();
}

std::vector<std::uint8_t> payload(const ParameterCheckpoint& c) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32(out, ParameterCheckpoint::kFormatVersion);
  const auto meta = metadata_text(c);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  for (const auto& [_, t] : c.params.entries()) {
    for (double v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

}  // namespace

std::string backbone_config_text(const BackboneConfig& config) {
  std::ostringstream os;
  os << "backbone.vocab_size=" << config.vocab_size << "\n"
     << "backbone.hidden_dim=" << config.hidden_dim << "\n"
     << "backbone.num_layers=" << config.num_layers << "\n"
     << "backbone.num_heads=" << config.num_heads << "\n"
     << "backbone.ffn_dim=" << config.ffn_dim << "\n"
     << "backbone.max_len=" << config.max_len << "\n"
     << "backbone.dropout=" << std::bit_cast<std::uint64_t>(config.dropout) << "\n"
     << "backbone.activation=" << activation_name(config.activation) << "\n"
     << "backbone.norm=" << (config.norm_order == NormOrder::kPreNorm ? "pre" : "post") << "\n";
  return os.str();
}

void round_to_float32(ad::ParameterSet& params) {
  for (const auto& [_, entry] : params.entries()) {
    ad::Tensor t = entry;
    for (auto& v : t.mutable_values()) v = static_cast<double>(static_cast<float>(v));
  }
}

ParameterCheckpoint make_checkpoint(const BackboneConfig& config, const ad::ParameterSet& params,
                                    const std::string& node_id, std::vector<std::string> lineage,
                                    std::vector<std::string> lineage_kinds, const std::string& head_kind,
                                    const HeadConfig& head_config, const std::string& fingerprint) {
  ParameterCheckpoint c;
  c.config = config;
  c.params = params.clone();
  round_to_float32(c.params);
  c.node_id = node_id;
  c.lineage = std::move(lineage);
  c.lineage_kinds = std::move(lineage_kinds);
  c.head_kind = head_kind;
  c.head_config = head_config;
  c.fingerprint = fingerprint;
  const auto bytes = payload(c);
  c.digest = to_hex(sha256(bytes));
  return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const ParameterCheckpoint& ckpt) {
  auto out = payload(ckpt);
  const auto d = sha256(out);
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

ParameterCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 + 4 + 4 + 32) fail(ErrorCode::kChecksum, "checkpoint is truncated");
  const std::size_t body = bytes.size() - 32;
  const auto expected = sha256(std::span<const std::uint8_t>(bytes.data(), body));
  if (std::memcmp(expected.data(), bytes.data() + body, 32) != 0) {
    fail(ErrorCode::kChecksum, "checkpoint digest does not match its contents");
  }
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) fail(ErrorCode::kVersion, "not a checkpoint (bad magic)");
  const auto version = get_u32(bytes.data() + 8);
  if (version != ParameterCheckpoint::kFormatVersion) {
    fail(ErrorCode::kVersion, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto meta_len = get_u32(bytes.data() + 12);
  if (16 + static_cast<std::size_t>(meta_len) > body) fail(ErrorCode::kChecksum, "metadata overruns the payload");
  const std::string meta(reinterpret_cast<const char*>(bytes.data() + 16), meta_len);

  ParameterCheckpoint c;
  std::map<std::string, std::string> fields;
  std::vector<std::pair<std::string, ad::Shape>> layout;
  std::istringstream is(meta);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kVersion, "malformed metadata line: " + line);
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "param") {
      const auto colon = value.rfind(':');
      layout.emplace_back(value.substr(0, colon), parse_shape(value.substr(colon + 1)));
    } else {
      fields[key] = value;
    }
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) fail(ErrorCode::kVersion, "metadata lacks " + key);
    return it->second;
  };
  c.config.vocab_size = std::stoul(get("backbone.vocab_size"));
  c.config.hidden_dim = std::stoul(get("backbone.hidden_dim"));
  c.config.num_layers = std::stoul(get("backbone.num_layers"));
  c.config.num_heads = std::stoul(get("backbone.num_heads"));
  c.config.ffn_dim = std::stoul(get("backbone.ffn_dim"));
  c.config.max_len = std::stoul(get("backbone.max_len"));
  c.config.dropout = std::bit_cast<double>(static_cast<std::uint64_t>(std::stoull(get("backbone.dropout"))));
  c.config.activation = parse_activation(get("backbone.activation"));
  c.config.norm_order = get("backbone.norm") == "pre" ? NormOrder::kPreNorm : NormOrder::kPostNorm;
  c.node_id = get("node");
  c.lineage = split_list(get("lineage"));
  c.lineage_kinds = split_list(get("lineage_kinds"));
  c.fingerprint = get("fingerprint");
  c.head_kind = get("head_kind");
  c.head_config.malware_families = std::stoul(get("head.malware_families"));
  c.head_config.name_vocab = std::stoul(get("head.name_vocab"));
  c.head_config.margin = std::bit_cast<double>(static_cast<std::uint64_t>(std::stoull(get("head.margin"))));
  c.head_config.mlp_activation = parse_activation(get("head.mlp_activation"));

  std::size_t offset = 16 + meta_len;
  for (const auto& [name, shape] : layout) {
    const auto n = ad::shape_numel(shape);
    if (offset + 4 * n > body) fail(ErrorCode::kChecksum, "parameter data overruns the payload");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes.data() + offset + 4 * i)));
    }
    offset += 4 * n;
    c.params.add(name, ad::Tensor::from(shape, std::move(values), true));
  }
  if (offset != body) fail(ErrorCode::kChecksum, "trailing bytes after parameter data");
  c.digest = to_hex(expected);
  return c;
}

void save_checkpoint(const ParameterCheckpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "failed writing checkpoint " + path);
}

ParameterCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace protst
