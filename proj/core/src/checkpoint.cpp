#include "cdm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "cdm/errors.hpp"

namespace cdm {

namespace {

constexpr const char* kMagic = "cdm.checkpoint.v1";

void write_f64le(std::ostream& out, const double* data, std::size_t n) {
    static_assert(sizeof(double) == 8);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &data[i], 8);
        char buf[8];
        for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        out.write(buf, 8);
    }
}

std::vector<double> read_f64le(std::istream& in, std::size_t n, const std::string& path) {
    std::vector<double> out(n);
    std::vector<char> buf(n * 8);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
        throw ConfigError("checkpoint: " + path + ": truncated payload");
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i * 8 + b]))
                    << (8 * b);
        }
        std::memcpy(&out[i], &bits, 8);
    }
    return out;
}

std::size_t parse_size(const std::string& tok, const std::string& path) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(tok, &pos);
        if (pos != tok.size() || v < 0) throw std::invalid_argument("range");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("checkpoint: " + path + ": bad integer '" + tok + "'");
    }
}

}  // namespace

bool Checkpoint::has_tensor(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

const CheckpointTensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw ConfigError("checkpoint: module '" + module + "' has no tensor '" + name + "'");
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw ConfigError("checkpoint: module '" + module + "' has no meta '" + key + "'");
    }
    return it->second;
}

std::size_t Checkpoint::meta_size(const std::string& key) const {
    return parse_size(meta_value(key), module);
}

std::uint64_t Checkpoint::meta_u64(const std::string& key) const {
    const std::string& v = meta_value(key);
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return static_cast<std::uint64_t>(x);
    } catch (const std::exception&) {
        throw ConfigError("checkpoint: meta '" + key + "': bad integer '" + v + "'");
    }
}

double Checkpoint::meta_double(const std::string& key) const {
    const std::string& v = meta_value(key);
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("checkpoint: meta '" + key + "': bad number '" + v + "'");
    }
}

std::vector<std::size_t> Checkpoint::meta_id_list(const std::string& key) const {
    const std::string& v = meta_value(key);
    std::vector<std::size_t> out;
    std::istringstream in(v);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(parse_size(tok, module));
    }
    return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DependencyError("checkpoint: cannot open " + path + " for writing");
    out << kMagic << "\n";
    out << "module " << ckpt.module << "\n";
    for (const auto& [k, v] : ckpt.meta) out << "meta " << k << " " << v << "\n";
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        out << "tensor " << t.name << " " << offset << " " << t.shape.size();
        std::size_t n = 1;
        for (std::size_t d : t.shape) {
            out << " " << d;
            n *= d;
        }
        out << "\n";
        if (t.values.size() != n) {
            throw ShapeError("checkpoint: tensor '" + t.name + "' has " +
                             std::to_string(t.values.size()) + " values for a shape of " +
                             std::to_string(n));
        }
        offset += n;
    }
    out << "payload f64le " << offset << "\n";
    out << "end\n";
    for (const auto& t : ckpt.tensors) write_f64le(out, t.values.data(), t.values.size());
    out.flush();
    if (!out) throw DependencyError("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("checkpoint: missing file " + path);

    Checkpoint ckpt;
    std::string line;
    if (!std::getline(in, line) || line != kMagic) {
        throw ConfigError("checkpoint: " + path + ": bad magic line");
    }
    struct Pending {
        std::string name;
        std::size_t offset;
        Shape shape;
        std::size_t numel;
    };
    std::vector<Pending> pending;
    std::size_t payload = 0;
    bool saw_payload = false;
    bool saw_end = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "end") {
            saw_end = true;
            break;
        }
        if (tag == "module") {
            ls >> ckpt.module;
        } else if (tag == "meta") {
            std::string k, v;
            ls >> k >> v;
            if (k.empty() || v.empty()) {
                throw ConfigError("checkpoint: " + path + ": malformed meta line '" + line + "'");
            }
            ckpt.meta[k] = v;
        } else if (tag == "tensor") {
            Pending p;
            std::string off_tok, rank_tok;
            ls >> p.name >> off_tok >> rank_tok;
            if (p.name.empty() || off_tok.empty() || rank_tok.empty()) {
                throw ConfigError("checkpoint: " + path + ": malformed tensor line '" + line +
                                  "'");
            }
            p.offset = parse_size(off_tok, path);
            const std::size_t rank = parse_size(rank_tok, path);
            p.numel = 1;
            for (std::size_t i = 0; i < rank; ++i) {
                std::string d;
                ls >> d;
                if (d.empty()) {
                    throw ConfigError("checkpoint: " + path + ": tensor '" + p.name +
                                      "' is missing dims");
                }
                const std::size_t dim = parse_size(d, path);
                p.shape.push_back(dim);
                p.numel *= dim;
            }
            pending.push_back(std::move(p));
        } else if (tag == "payload") {
            std::string enc, count;
            ls >> enc >> count;
            if (enc != "f64le") {
                throw ConfigError("checkpoint: " + path + ": unsupported payload encoding '" +
                                  enc + "'");
            }
            payload = parse_size(count, path);
            saw_payload = true;
        } else {
            throw ConfigError("checkpoint: " + path + ": unknown header line '" + line + "'");
        }
    }
    if (!saw_end || !saw_payload || ckpt.module.empty()) {
        throw ConfigError("checkpoint: " + path + ": incomplete header");
    }
    std::size_t expect = 0;
    for (const auto& p : pending) {
        if (p.offset != expect) {
            throw ConfigError("checkpoint: " + path + ": tensor '" + p.name +
                              "' offset " + std::to_string(p.offset) + " does not follow " +
                              std::to_string(expect));
        }
        expect += p.numel;
    }
    if (expect != payload) {
        throw ConfigError("checkpoint: " + path + ": payload count " + std::to_string(payload) +
                          " does not match tensors (" + std::to_string(expect) + ")");
    }
    std::vector<double> data = read_f64le(in, payload, path);
    for (auto& p : pending) {
        CheckpointTensor t;
        t.name = std::move(p.name);
        t.shape = std::move(p.shape);
        t.values.assign(data.begin() + static_cast<std::ptrdiff_t>(p.offset),
                        data.begin() + static_cast<std::ptrdiff_t>(p.offset + p.numel));
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

Checkpoint checkpoint_from_params(const std::string& module,
                                  const std::vector<NamedTensor>& params) {
    Checkpoint ckpt;
    ckpt.module = module;
    for (const auto& p : params) {
        CheckpointTensor t;
        t.name = p.name;
        t.shape = p.tensor.shape();
        t.values = p.tensor.values();
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void load_into_params(const Checkpoint& ckpt, const std::vector<NamedTensor>& params) {
    for (const auto& p : params) {
        const CheckpointTensor& t = ckpt.tensor(p.name);
        if (t.shape != p.tensor.shape()) {
            throw ShapeError("checkpoint: tensor '" + p.name + "' shape mismatch on load");
        }
        Tensor handle = p.tensor;  // shared storage; copy just drops constness
        std::vector<double>& dst = handle.mutable_values();
        std::copy(t.values.begin(), t.values.end(), dst.begin());
    }
}

std::string join_ids(const std::vector<std::size_t>& ids) {
    std::ostringstream out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out << ",";
        out << ids[i];
    }
    return out.str();
}

}  // namespace cdm
