#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cdiff/graph.hpp"
#include "cdiff/mat.hpp"
#include "cdiff/rng.hpp"

namespace cdiff::nn {

// Named, ordered parameter container. Order of creation defines optimizer
// update order and checkpoint array order.
struct ParamStore {
    struct Entry {
        std::string name;
        Mat value;
    };
    std::vector<Entry> entries;

    Mat& add(const std::string& name, Mat init);
    Mat* find(const std::string& name);
    const Mat* find(const std::string& name) const;
    size_t total_params() const;
};

// Gradient accumulator parallel to a ParamStore; sums per-sample graph
// gradients in a fixed order so results are independent of threading.
struct GradMap {
    const ParamStore* store;
    std::vector<Mat> grads;
    std::unordered_map<const Mat*, int> index;

    explicit GradMap(const ParamStore& s);
    void accumulate(const ad::Graph& g);
    void add(const GradMap& other);
    void scale(double s);
    void zero();
};

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<Mat> m, v;

    explicit Adam(const ParamStore& s);
    void step(ParamStore& s, const GradMap& g, double lr);
};

Mat xavier_uniform(int rows, int cols, int fan_in, int fan_out, Rng& rng);
inline Mat xavier_uniform(int rows, int cols, Rng& rng) {
    return xavier_uniform(rows, cols, rows, cols, rng);
}

// ---- composite graph layers ----

// x (R x in) * W (in x out) + b (1 x out); b may be null.
int linear(ad::Graph& g, int x, const Mat* W, const Mat* b);
// Per-row standardization with learned gain/bias (1 x C each).
int layer_norm_rows(ad::Graph& g, int x, const Mat* gain, const Mat* bias, double eps = 1e-5);
// Feature-map group normalization; x is C x P, gain/bias C x 1.
int group_norm(ad::Graph& g, int x, int groups, const Mat* gain, const Mat* bias, double eps = 1e-5);
// W is outC x (C*k*k), b outC x 1 (nullable); returns outC x (Ho*Wo).
int conv2d(ad::Graph& g, int x, const Mat* W, const Mat* b, int C, int H, int Wd, int k, int stride, int pad);
// W is outC x (C*k^3), b outC x 1 (nullable); returns outC x (Do*Ho*Wo).
int conv3d(ad::Graph& g, int x, const Mat* W, const Mat* b, int C, int D, int H, int Wd, int k, int stride, int pad);
int mse(ad::Graph& g, int a, int b);

// ---- checkpoints ----
// Binary layout: magic "CDCK", u32 version, u32 header length, JSON header
// {kind, meta, arrays:[{name,rows,cols}]}, then each array as little-endian
// float32 in header order.
struct RawCheckpoint {
    std::string kind;
    std::string meta_json;
    std::vector<std::pair<std::string, Mat>> arrays;
};

void save_checkpoint(const std::string& path, const std::string& kind, const std::string& meta_json,
                     const ParamStore& store);
RawCheckpoint read_checkpoint(const std::string& path);
// Copies arrays into an already-built store; any missing name or shape
// mismatch is a hard error.
void fill_store(const RawCheckpoint& raw, ParamStore& store);

}  // namespace cdiff::nn
