#include "preflab/nn_core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace preflab {

InitScheme parse_init_scheme(const std::string& name) {
    if (name == "data-driven") return InitScheme::DataDriven;
    if (name == "kaiming-uniform") return InitScheme::KaimingUniform;
    if (name == "xavier-uniform") return InitScheme::XavierUniform;
    if (name == "orthonormal") return InitScheme::Orthonormal;
    if (name == "zeros") return InitScheme::Zeros;
    if (name == "ones") return InitScheme::Ones;
    throw std::invalid_argument("unknown init scheme: " + name);
}

std::string to_string(InitScheme scheme) {
    switch (scheme) {
        case InitScheme::DataDriven: return "data-driven";
        case InitScheme::KaimingUniform: return "kaiming-uniform";
        case InitScheme::XavierUniform: return "xavier-uniform";
        case InitScheme::Orthonormal: return "orthonormal";
        case InitScheme::Zeros: return "zeros";
        case InitScheme::Ones: return "ones";
    }
    throw std::invalid_argument("unknown init scheme value");
}

NetGrads make_zero_grads(const DenseNet& net) {
    NetGrads grads;
    grads.weights.reserve(net.weights.size());
    grads.biases.reserve(net.biases.size());
    for (const Matrix& w : net.weights) grads.weights.emplace_back(w.rows, w.cols);
    for (const auto& b : net.biases) grads.biases.emplace_back(b.size(), 0.0);
    return grads;
}

void zero_grads(NetGrads& grads) {
    for (Matrix& w : grads.weights) std::fill(w.data.begin(), w.data.end(), 0.0);
    for (auto& b : grads.biases) std::fill(b.begin(), b.end(), 0.0);
}

void scale_grads(NetGrads& grads, double factor) {
    for (Matrix& w : grads.weights)
        for (double& v : w.data) v *= factor;
    for (auto& b : grads.biases)
        for (double& v : b) v *= factor;
}

namespace {

// Modified Gram-Schmidt with a re-orthogonalization pass on the columns of
// a (m x n, m >= n). Normalization keeps R's diagonal positive, which is
// exactly the sign-corrected factorization of the drawn Gaussian matrix.
Matrix orthonormalize_columns(Matrix a) {
    const int m = a.rows;
    const int n = a.cols;
    for (int k = 0; k < n; ++k) {
        for (int pass = 0; pass < 2; ++pass) {
            for (int j = 0; j < k; ++j) {
                double r = 0.0;
                for (int i = 0; i < m; ++i) r += a(i, j) * a(i, k);
                for (int i = 0; i < m; ++i) a(i, k) -= r * a(i, j);
            }
        }
        double norm = 0.0;
        for (int i = 0; i < m; ++i) norm += a(i, k) * a(i, k);
        norm = std::sqrt(norm);
        if (norm <= 0.0)
            throw std::runtime_error("degenerate matrix in orthonormal init");
        for (int i = 0; i < m; ++i) a(i, k) /= norm;
    }
    return a;
}

Matrix orthonormal_weight(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const int m = std::max(rows, cols);
    const int n = std::min(rows, cols);
    Matrix tall(m, n);
    for (double& v : tall.data) v = normal(rng);
    Matrix q = orthonormalize_columns(std::move(tall));
    if (rows <= cols) {
        Matrix w(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) w(i, j) = q(j, i);
        return w;
    }
    return q;
}

}  // namespace

DenseNet init_weights(InitScheme scheme, const std::vector<int>& dims,
                      OutputActivation output_activation, std::mt19937_64& rng) {
    if (scheme == InitScheme::DataDriven)
        throw std::invalid_argument(
            "data-driven is not a weight scheme; initialize with its base scheme "
            "and run the pretraining fit");
    if (dims.size() < 2) throw std::invalid_argument("net needs at least two layer dims");
    for (int d : dims)
        if (d < 1) throw std::invalid_argument("layer dims must be positive");

    DenseNet net;
    net.dims = dims;
    net.output_activation = output_activation;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        const int fan_in = dims[k];
        const int fan_out = dims[k + 1];
        Matrix w(fan_out, fan_in);
        std::vector<double> b(fan_out, 0.0);
        switch (scheme) {
            case InitScheme::Zeros:
                break;
            case InitScheme::Ones:
                std::fill(w.data.begin(), w.data.end(), 1.0);
                std::fill(b.begin(), b.end(), 1.0);
                break;
            case InitScheme::KaimingUniform: {
                const double bound = std::sqrt(6.0 / fan_in);
                std::uniform_real_distribution<double> uniform(-bound, bound);
                for (double& v : w.data) v = uniform(rng);
                break;
            }
            case InitScheme::XavierUniform: {
                const double bound = std::sqrt(6.0 / (fan_in + fan_out));
                std::uniform_real_distribution<double> uniform(-bound, bound);
                for (double& v : w.data) v = uniform(rng);
                break;
            }
            case InitScheme::Orthonormal:
                w = orthonormal_weight(fan_out, fan_in, rng);
                break;
            case InitScheme::DataDriven:
                break;  // unreachable
        }
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));
    }
    return net;
}

namespace {

std::vector<double> run_forward(const DenseNet& net, const double* dense,
                                std::span<const int> sparse, ForwardCache* cache) {
    const int num_layers = net.num_layers();
    if (cache) {
        cache->pre.assign(num_layers, {});
        cache->post.assign(num_layers, {});
        cache->sparse_input.clear();
        cache->dense_input.clear();
        if (dense) cache->dense_input.assign(dense, dense + net.input_dim());
        else cache->sparse_input.assign(sparse.begin(), sparse.end());
    }

    std::vector<double> h;
    for (int k = 0; k < num_layers; ++k) {
        const Matrix& w = net.weights[k];
        const std::vector<double>& b = net.biases[k];
        std::vector<double> pre(w.rows);
        if (k == 0 && dense == nullptr) {
            for (int i = 0; i < w.rows; ++i) {
                const double* wrow = w.row_ptr(i);
                double acc = 0.0;
                for (int idx : sparse) acc += wrow[idx];
                pre[i] = acc + b[i];
            }
        } else {
            const double* in = (k == 0) ? dense : h.data();
            for (int i = 0; i < w.rows; ++i) {
                const double* wrow = w.row_ptr(i);
                double acc = 0.0;
                for (int j = 0; j < w.cols; ++j) acc += wrow[j] * in[j];
                pre[i] = acc + b[i];
            }
        }
        std::vector<double> post(w.rows);
        if (k + 1 < num_layers) {
            for (int i = 0; i < w.rows; ++i) post[i] = pre[i] > 0.0 ? pre[i] : 0.0;
        } else if (net.output_activation == OutputActivation::Tanh) {
            for (int i = 0; i < w.rows; ++i) post[i] = std::tanh(pre[i]);
        } else {
            post = pre;
        }
        if (cache) {
            cache->pre[k] = std::move(pre);
            cache->post[k] = post;
        }
        h = std::move(post);
    }
    return h;
}

}  // namespace

std::vector<double> forward(const DenseNet& net, std::span<const double> x,
                            ForwardCache* cache) {
    if (static_cast<int>(x.size()) != net.input_dim())
        throw std::invalid_argument("forward: input dimension mismatch");
    return run_forward(net, x.data(), {}, cache);
}

std::vector<double> forward_sparse(const DenseNet& net, std::span<const int> active,
                                   ForwardCache* cache) {
    for (int idx : active)
        if (idx < 0 || idx >= net.input_dim())
            throw std::invalid_argument("forward_sparse: active index out of range");
    return run_forward(net, nullptr, active, cache);
}

void backward(const DenseNet& net, const ForwardCache& cache,
              std::span<const double> grad_y, NetGrads& grads) {
    const int num_layers = net.num_layers();
    if (static_cast<int>(grad_y.size()) != net.output_dim())
        throw std::invalid_argument("backward: output gradient dimension mismatch");
    if (static_cast<int>(cache.pre.size()) != num_layers ||
        static_cast<int>(cache.post.size()) != num_layers)
        throw std::invalid_argument("backward: stale or mismatched forward cache");
    for (int k = 0; k < num_layers; ++k)
        if (cache.pre[k].size() != static_cast<std::size_t>(net.weights[k].rows))
            throw std::invalid_argument("backward: cache does not match this net");
    if (!cache.dense_input.empty() &&
        static_cast<int>(cache.dense_input.size()) != net.input_dim())
        throw std::invalid_argument("backward: cached input does not match this net");

    std::vector<double> delta(grad_y.begin(), grad_y.end());
    if (net.output_activation == OutputActivation::Tanh) {
        const std::vector<double>& out = cache.post.back();
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= 1.0 - out[i] * out[i];
    }

    for (int k = num_layers - 1; k >= 0; --k) {
        const Matrix& w = net.weights[k];
        Matrix& dw = grads.weights[k];
        std::vector<double>& db = grads.biases[k];
        if (k > 0) {
            const std::vector<double>& h_prev = cache.post[k - 1];
            const std::vector<double>& pre_prev = cache.pre[k - 1];
            std::vector<double> delta_prev(w.cols, 0.0);
            for (int i = 0; i < w.rows; ++i) {
                const double d = delta[i];
                db[i] += d;
                const double* wrow = w.row_ptr(i);
                double* dwrow = dw.row_ptr(i);
                for (int j = 0; j < w.cols; ++j) {
                    dwrow[j] += d * h_prev[j];
                    delta_prev[j] += wrow[j] * d;
                }
            }
            for (int j = 0; j < w.cols; ++j)
                if (!(pre_prev[j] > 0.0)) delta_prev[j] = 0.0;
            delta = std::move(delta_prev);
        } else if (!cache.dense_input.empty()) {
            const double* in = cache.dense_input.data();
            for (int i = 0; i < w.rows; ++i) {
                const double d = delta[i];
                db[i] += d;
                double* dwrow = dw.row_ptr(i);
                for (int j = 0; j < w.cols; ++j) dwrow[j] += d * in[j];
            }
        } else {
            for (int i = 0; i < w.rows; ++i) {
                const double d = delta[i];
                db[i] += d;
                double* dwrow = dw.row_ptr(i);
                for (int idx : cache.sparse_input) dwrow[idx] += d;
            }
        }
    }
}

NetGrads backward(const DenseNet& net, const ForwardCache& cache,
                  std::span<const double> grad_y) {
    NetGrads grads = make_zero_grads(net);
    backward(net, cache, grad_y, grads);
    return grads;
}

AdamState make_adam(const DenseNet& net, AdamConfig cfg) {
    AdamState state;
    state.cfg = cfg;
    for (const Matrix& w : net.weights) {
        state.m_w.emplace_back(w.rows, w.cols);
        state.v_w.emplace_back(w.rows, w.cols);
    }
    for (const auto& b : net.biases) {
        state.m_b.emplace_back(b.size(), 0.0);
        state.v_b.emplace_back(b.size(), 0.0);
    }
    return state;
}

namespace {

void adam_update_span(std::span<double> param, std::span<const double> grad,
                      std::span<double> m, std::span<double> v,
                      const AdamConfig& cfg, double bc1, double bc2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

}  // namespace

void adam_step(DenseNet& net, const NetGrads& grads, AdamState& state) {
    if (grads.weights.size() != net.weights.size() ||
        grads.biases.size() != net.biases.size())
        throw std::invalid_argument("adam_step: gradient shape mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
        adam_update_span(net.weights[k].data, grads.weights[k].data,
                         state.m_w[k].data, state.v_w[k].data, state.cfg, bc1, bc2);
        adam_update_span(net.biases[k], grads.biases[k], state.m_b[k], state.v_b[k],
                         state.cfg, bc1, bc2);
    }
}

namespace {

double loss_at(const DenseNet& net, const ScalarLoss& loss, std::span<const double> x) {
    std::vector<double> y = forward(net, x);
    return loss.value(y);
}

}  // namespace

double grad_check(const DenseNet& net, const ScalarLoss& loss,
                  std::span<const double> x, double h) {
    ForwardCache cache;
    std::vector<double> y = forward(net, x, &cache);
    std::vector<double> grad_y = loss.grad(y);
    NetGrads analytic = backward(net, cache, grad_y);

    DenseNet probe = net;
    double max_err = 0.0;
    auto check_span = [&](std::span<double> params, std::span<const double> grads) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + h;
            const double up = loss_at(probe, loss, x);
            params[i] = saved - h;
            const double down = loss_at(probe, loss, x);
            params[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double bp = grads[i];
            const double denom = std::max({1.0, std::fabs(fd), std::fabs(bp)});
            max_err = std::max(max_err, std::fabs(fd - bp) / denom);
        }
    };
    for (std::size_t k = 0; k < probe.weights.size(); ++k) {
        check_span(probe.weights[k].data, analytic.weights[k].data);
        check_span(probe.biases[k], analytic.biases[k]);
    }
    return max_err;
}

namespace {

std::string format_param(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_param(const std::string& token) {
    double v = 0.0;
    auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size())
        throw std::runtime_error("checkpoint: bad numeric token '" + token + "'");
    return v;
}

}  // namespace

void save_checkpoint(const DenseNet& net, std::ostream& out) {
    out << "preflab-net\n";
    out << "dims " << net.dims.size();
    for (int d : net.dims) out << ' ' << d;
    out << '\n';
    out << "output " << (net.output_activation == OutputActivation::Tanh ? "tanh" : "identity")
        << '\n';
    for (int k = 0; k < net.num_layers(); ++k) {
        out << "W" << k << '\n';
        const Matrix& w = net.weights[k];
        for (int i = 0; i < w.rows; ++i) {
            const double* row = w.row_ptr(i);
            for (int j = 0; j < w.cols; ++j) {
                if (j) out << ' ';
                out << format_param(row[j]);
            }
            out << '\n';
        }
        out << "b" << k << '\n';
        const auto& b = net.biases[k];
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (i) out << ' ';
            out << format_param(b[i]);
        }
        out << '\n';
    }
}

void save_checkpoint(const DenseNet& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    save_checkpoint(net, out);
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

DenseNet load_checkpoint(std::istream& in) {
    std::string token;
    in >> token;
    if (token != "preflab-net") throw std::runtime_error("not a preflab checkpoint");
    in >> token;
    if (token != "dims") throw std::runtime_error("checkpoint: expected dims");
    std::size_t count = 0;
    in >> count;
    if (!in || count < 2) throw std::runtime_error("checkpoint: bad dim count");
    std::vector<int> dims(count);
    for (auto& d : dims) {
        in >> d;
        if (!in || d < 1) throw std::runtime_error("checkpoint: bad dim");
    }
    in >> token;
    if (token != "output") throw std::runtime_error("checkpoint: expected output tag");
    in >> token;
    OutputActivation act;
    if (token == "tanh") act = OutputActivation::Tanh;
    else if (token == "identity") act = OutputActivation::Identity;
    else throw std::runtime_error("checkpoint: unknown output activation " + token);

    DenseNet net;
    net.dims = dims;
    net.output_activation = act;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        in >> token;
        if (token != "W" + std::to_string(k)) throw std::runtime_error("checkpoint: expected W block");
        Matrix w(dims[k + 1], dims[k]);
        for (double& v : w.data) {
            in >> token;
            if (!in) throw std::runtime_error("checkpoint: truncated weights");
            v = parse_param(token);
        }
        in >> token;
        if (token != "b" + std::to_string(k)) throw std::runtime_error("checkpoint: expected b block");
        std::vector<double> b(dims[k + 1]);
        for (double& v : b) {
            in >> token;
            if (!in) throw std::runtime_error("checkpoint: truncated biases");
            v = parse_param(token);
        }
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));
    }
    return net;
}

DenseNet load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    return load_checkpoint(in);
}

std::uint64_t derive_stream_seed(std::uint64_t root_seed, std::uint64_t stream) {
    // SplitMix64 finalizer over root + stream offset; decorrelates streams
    // of one root seed and nearby root seeds.
    std::uint64_t z = root_seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::mt19937_64 make_stream_rng(std::uint64_t root_seed, std::uint64_t stream) {
    return std::mt19937_64(derive_stream_seed(root_seed, stream));
}

}  // namespace preflab
