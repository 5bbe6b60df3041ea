#include "cdiff/nn.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "cdiff/errors.hpp"
#include "cdiff/kernels.hpp"
#include "json.hpp"

namespace cdiff::nn {

Mat& ParamStore::add(const std::string& name, Mat init) {
    if (find(name)) throw ArgumentError("duplicate parameter name: " + name);
    entries.push_back({name, std::move(init)});
    return entries.back().value;
}

Mat* ParamStore::find(const std::string& name) {
    for (auto& e : entries)
        if (e.name == name) return &e.value;
    return nullptr;
}

const Mat* ParamStore::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e.value;
    return nullptr;
}

size_t ParamStore::total_params() const {
    size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
}

GradMap::GradMap(const ParamStore& s) : store(&s) {
    grads.reserve(s.entries.size());
    for (size_t i = 0; i < s.entries.size(); ++i) {
        const Mat& v = s.entries[i].value;
        grads.emplace_back(v.rows, v.cols);
        index[&v] = static_cast<int>(i);
    }
}

void GradMap::accumulate(const ad::Graph& g) {
    g.for_each_param_grad([&](const Mat* p, const Mat& grad) {
        auto it = index.find(p);
        if (it == index.end()) return;  // parameter of a frozen store
        Mat& acc = grads[static_cast<size_t>(it->second)];
        kernels::axpy(acc.size(), 1.0, grad.d.data(), acc.d.data());
    });
}

void GradMap::add(const GradMap& other) {
    for (size_t i = 0; i < grads.size(); ++i)
        kernels::axpy(grads[i].size(), 1.0, other.grads[i].d.data(), grads[i].d.data());
}

void GradMap::scale(double s) {
    for (auto& gm : grads) kernels::scale(gm.size(), s, gm.d.data(), gm.d.data());
}

void GradMap::zero() {
    for (auto& gm : grads) gm.fill(0.0);
}

Adam::Adam(const ParamStore& s) {
    m.reserve(s.entries.size());
    v.reserve(s.entries.size());
    for (const auto& e : s.entries) {
        m.emplace_back(e.value.rows, e.value.cols);
        v.emplace_back(e.value.rows, e.value.cols);
    }
}

void Adam::step(ParamStore& s, const GradMap& g, double lr) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < s.entries.size(); ++i) {
        Mat& p = s.entries[i].value;
        const Mat& grad = g.grads[i];
        Mat& mi = m[i];
        Mat& vi = v[i];
        for (size_t j = 0; j < p.size(); ++j) {
            double gj = grad.d[j];
            mi.d[j] = beta1 * mi.d[j] + (1.0 - beta1) * gj;
            vi.d[j] = beta2 * vi.d[j] + (1.0 - beta2) * gj * gj;
            double mhat = mi.d[j] / bc1;
            double vhat = vi.d[j] / bc2;
            p.d[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

Mat xavier_uniform(int rows, int cols, int fan_in, int fan_out, Rng& rng) {
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Mat m(rows, cols);
    for (auto& v : m.d) v = (2.0 * rng.uniform() - 1.0) * limit;
    return m;
}

int linear(ad::Graph& g, int x, const Mat* W, const Mat* b) {
    int out = g.matmul(x, g.param(W));
    if (b) out = g.add(out, g.param(b));
    return out;
}

int layer_norm_rows(ad::Graph& g, int x, const Mat* gain, const Mat* bias, double eps) {
    int cols = g.val(x).cols;
    int mean = g.scale(g.row_sums(x), 1.0 / cols);
    int centered = g.sub(x, mean);
    int var = g.scale(g.row_sums(g.mul(centered, centered)), 1.0 / cols);
    int inv = g.pow_const(g.add_const(var, eps), -0.5);
    int normed = g.mul(centered, inv);
    return g.add(g.mul(normed, g.param(gain)), g.param(bias));
}

int group_norm(ad::Graph& g, int x, int groups, const Mat* gain, const Mat* bias, double eps) {
    int C = g.val(x).rows;
    if (groups < 1 || C % groups != 0) throw ShapeError("group_norm: groups must divide channels");
    int per = C / groups;
    int out = -1;
    for (int gi = 0; gi < groups; ++gi) {
        int part = g.slice_rows(x, gi * per, (gi + 1) * per);
        int mean = g.mean_all(part);
        int centered = g.sub(part, mean);
        int var = g.mean_all(g.mul(centered, centered));
        int inv = g.pow_const(g.add_const(var, eps), -0.5);
        int normed = g.mul(centered, inv);
        out = gi == 0 ? normed : g.concat_rows(out, normed);
    }
    return g.add(g.mul(out, g.param(gain)), g.param(bias));
}

int conv2d(ad::Graph& g, int x, const Mat* W, const Mat* b, int C, int H, int Wd, int k, int stride, int pad) {
    int cols = g.im2col2d(x, C, H, Wd, k, stride, pad);
    int out = g.matmul(g.param(W), cols);
    if (b) out = g.add(out, g.param(b));
    return out;
}

int conv3d(ad::Graph& g, int x, const Mat* W, const Mat* b, int C, int D, int H, int Wd, int k, int stride,
           int pad) {
    int cols = g.im2col3d(x, C, D, H, Wd, k, stride, pad);
    int out = g.matmul(g.param(W), cols);
    if (b) out = g.add(out, g.param(b));
    return out;
}

int mse(ad::Graph& g, int a, int b) {
    int d = g.sub(a, b);
    return g.mean_all(g.mul(d, d));
}

namespace {

void write_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32(std::ofstream& f, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(f, bits);
}

float read_f32(std::ifstream& f) {
    uint32_t bits = read_u32(f);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

constexpr uint32_t kMagic = 0x4b434443;  // "CDCK" little-endian
constexpr uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind, const std::string& meta_json,
                     const ParamStore& store) {
    nlohmann::json header;
    header["kind"] = kind;
    header["meta"] = nlohmann::json::parse(meta_json.empty() ? "{}" : meta_json);
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& e : store.entries)
        arrays.push_back({{"name", e.name}, {"rows", e.value.rows}, {"cols", e.value.cols}});
    header["arrays"] = arrays;
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path);
    write_u32(f, kMagic);
    write_u32(f, kVersion);
    write_u32(f, static_cast<uint32_t>(hs.size()));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& e : store.entries)
        for (double v : e.value.d) write_f32(f, static_cast<float>(v));
    if (!f) throw IoError("write failed for checkpoint " + path);
}

RawCheckpoint read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path);
    if (read_u32(f) != kMagic) throw IoError("bad checkpoint magic in " + path);
    uint32_t version = read_u32(f);
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    uint32_t hlen = read_u32(f);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw IoError("truncated checkpoint header in " + path);
    nlohmann::json header = nlohmann::json::parse(hs);

    RawCheckpoint raw;
    raw.kind = header.at("kind").get<std::string>();
    raw.meta_json = header.at("meta").dump();
    for (const auto& a : header.at("arrays")) {
        Mat m(a.at("rows").get<int>(), a.at("cols").get<int>());
        for (auto& v : m.d) v = static_cast<double>(read_f32(f));
        if (!f) throw IoError("truncated checkpoint arrays in " + path);
        raw.arrays.emplace_back(a.at("name").get<std::string>(), std::move(m));
    }
    return raw;
}

void fill_store(const RawCheckpoint& raw, ParamStore& store) {
    if (raw.arrays.size() != store.entries.size())
        throw ShapeError("checkpoint has " + std::to_string(raw.arrays.size()) + " arrays, model expects " +
                         std::to_string(store.entries.size()));
    for (const auto& [name, m] : raw.arrays) {
        Mat* dst = store.find(name);
        if (!dst) throw ShapeError("checkpoint array '" + name + "' unknown to model");
        if (!dst->same_shape(m))
            throw ShapeError("checkpoint array '" + name + "' shape " + m.shape_str() + " vs model " +
                             dst->shape_str());
        *dst = m;
    }
}

}  // namespace cdiff::nn
