#pragma once

#include "semid/error.hpp"
#include "semid/types.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace semid {

/// Input-output record: one row per sample, `inputs` is N x q and `outputs` is N x p.
class Dataset {
public:
    Dataset() = default;

    Dataset(RowMatrix inputs, RowMatrix outputs, double sample_period)
        : inputs_(std::move(inputs)), outputs_(std::move(outputs)), sample_period_(sample_period) {
        if (inputs_.rows() != outputs_.rows())
            throw DimensionError("dataset: input and output sequences differ in length (" +
                                 std::to_string(inputs_.rows()) + " vs " + std::to_string(outputs_.rows()) + ")");
        if (inputs_.cols() < 1 || outputs_.cols() < 1)
            throw DimensionError("dataset: need at least one input and one output channel");
        if (!(sample_period_ > 0.0))
            throw DimensionError("dataset: sample period must be positive");
    }

    Index size() const noexcept { return inputs_.rows(); }
    Index n_inputs() const noexcept { return inputs_.cols(); }
    Index n_outputs() const noexcept { return outputs_.cols(); }
    double sample_period() const noexcept { return sample_period_; }

    const RowMatrix& inputs() const noexcept { return inputs_; }
    const RowMatrix& outputs() const noexcept { return outputs_; }

    /// Free-form provenance (generator name, seed, RNG id...). Written as
    /// `# key=value` comment lines ahead of the CSV header.
    std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
    const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

    Dataset slice(Index begin, Index count) const {
        if (begin < 0 || count < 0 || begin + count > size())
            throw DimensionError("dataset: slice out of range");
        Dataset d(inputs_.middleRows(begin, count), outputs_.middleRows(begin, count), sample_period_);
        d.metadata_ = metadata_;
        return d;
    }

private:
    RowMatrix inputs_;
    RowMatrix outputs_;
    double sample_period_ = 1.0;
    std::map<std::string, std::string> metadata_;
};

/// Quadratic weights of the simulation-error cost plus the ridge coefficient
/// of rho(theta) = ridge * ||theta||^2.
class Weighting {
public:
    Weighting() = default;

    Weighting(Matrix output_weight, Matrix input_weight, double ridge)
        : output_weight_(std::move(output_weight)), input_weight_(std::move(input_weight)), ridge_(ridge) {
        check_positive_definite(output_weight_, "W_y");
        if (input_weight_.size() > 0) check_positive_definite(input_weight_, "W_u");
        if (!(ridge_ >= 0.0)) throw DimensionError("weighting: ridge coefficient must be nonnegative");
    }

    /// Identity weights for p outputs and q inputs.
    static Weighting identity(Index p, Index q, double ridge = 0.0) {
        return Weighting(Matrix::Identity(p, p), Matrix::Identity(q, q), ridge);
    }

    const Matrix& output_weight() const noexcept { return output_weight_; }
    const Matrix& input_weight() const noexcept { return input_weight_; }
    double ridge() const noexcept { return ridge_; }

    Weighting with_input_weight(Matrix w) const { return Weighting(output_weight_, std::move(w), ridge_); }

private:
    // Sylvester's criterion: symmetric with all leading principal minors > 0.
    static void check_positive_definite(const Matrix& w, const char* name) {
        if (w.rows() != w.cols() || w.rows() == 0)
            throw DimensionError(std::string("weighting: ") + name + " must be square and nonempty");
        if (!w.isApprox(w.transpose(), 1e-12))
            throw DimensionError(std::string("weighting: ") + name + " must be symmetric");
        for (Index k = 1; k <= w.rows(); ++k) {
            if (!(w.topLeftCorner(k, k).determinant() > 0.0))
                throw DimensionError(std::string("weighting: ") + name + " is not positive definite (leading minor " +
                                     std::to_string(k) + ")");
        }
    }

    Matrix output_weight_ = Matrix::Identity(1, 1);
    Matrix input_weight_ = Matrix::Identity(1, 1);
    double ridge_ = 0.0;
};

/// Per-channel affine scaling (x - offset) / scale.
struct ChannelScaling {
    Vector input_offset, input_scale, output_offset, output_scale;

    Dataset apply(const Dataset& d) const {
        RowMatrix u = (d.inputs().rowwise() - input_offset.transpose()).array().rowwise() / input_scale.transpose().array();
        RowMatrix y = (d.outputs().rowwise() - output_offset.transpose()).array().rowwise() / output_scale.transpose().array();
        Dataset out(std::move(u), std::move(y), d.sample_period());
        out.metadata() = d.metadata();
        return out;
    }

    RowMatrix restore_outputs(const RowMatrix& y) const {
        return (y.array().rowwise() * output_scale.transpose().array()).rowwise() + output_offset.transpose().array();
    }

    static ChannelScaling identity(Index q, Index p) {
        return {Vector::Zero(q), Vector::Ones(q), Vector::Zero(p), Vector::Ones(p)};
    }
};

/// Zero-mean, unit-variance scaling fitted on `d`. Constant channels keep scale 1.
inline ChannelScaling fit_standardization(const Dataset& d) {
    auto stats = [](const RowMatrix& x, Vector& mean, Vector& scale) {
        mean = x.colwise().mean().transpose();
        scale.resize(x.cols());
        for (Index c = 0; c < x.cols(); ++c) {
            double var = (x.col(c).array() - mean(c)).square().sum() / static_cast<double>(x.rows());
            scale(c) = var > 0.0 ? std::sqrt(var) : 1.0;
        }
    };
    ChannelScaling s;
    stats(d.inputs(), s.input_offset, s.input_scale);
    stats(d.outputs(), s.output_offset, s.output_scale);
    return s;
}

namespace csv {

/// Formats with `digits` significant digits; used by every table writer.
inline std::string format(double v, int digits = 6) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

/// Writes `# key=value` metadata lines, then `t,u1..uq,y1..yp`.
inline void write(std::ostream& os, const Dataset& d, int digits = 17) {
    for (const auto& [k, v] : d.metadata()) os << "# " << k << "=" << v << "\n";
    os << "# sample_period=" << format(d.sample_period(), 17) << "\n";
    os << "t";
    for (Index j = 0; j < d.n_inputs(); ++j) os << ",u" << j + 1;
    for (Index j = 0; j < d.n_outputs(); ++j) os << ",y" << j + 1;
    os << "\n";
    for (Index t = 0; t < d.size(); ++t) {
        os << format(static_cast<double>(t) * d.sample_period(), digits);
        for (Index j = 0; j < d.n_inputs(); ++j) os << "," << format(d.inputs()(t, j), digits);
        for (Index j = 0; j < d.n_outputs(); ++j) os << "," << format(d.outputs()(t, j), digits);
        os << "\n";
    }
}

inline void write_file(const std::string& path, const Dataset& d) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    write(f, d);
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size() && s.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + s + "' as a number");
    }
}

/// Reads the format produced by `write`. The sample period comes from the
/// `sample_period` comment when present, else from the spacing of `t`.
inline Dataset read(std::istream& is) {
    std::map<std::string, std::string> meta;
    std::string line;
    std::vector<std::string> header;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto body = line.substr(1);
            auto start = body.find_first_not_of(' ');
            body = start == std::string::npos ? "" : body.substr(start);
            auto eq = body.find('=');
            if (eq != std::string::npos) meta[body.substr(0, eq)] = body.substr(eq + 1);
            continue;
        }
        header = split(line);
        break;
    }
    if (header.empty() || header[0] != "t") throw DataError("dataset: missing 't,u1,...,y1,...' header");
    Index q = 0, p = 0;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const auto& h = header[c];
        if (h.size() > 1 && h[0] == 'u' && p == 0) ++q;
        else if (h.size() > 1 && h[0] == 'y') ++p;
        else throw DataError("dataset: unexpected column '" + h + "' (inputs must precede outputs)");
    }
    if (q == 0 || p == 0) throw DataError("dataset: need at least one u and one y column");

    std::vector<double> times, values;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cells = split(line);
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " columns, found " + std::to_string(cells.size()));
        times.push_back(parse_double(cells[0], line_no));
        for (std::size_t c = 1; c < cells.size(); ++c) values.push_back(parse_double(cells[c], line_no));
    }
    const Index n = static_cast<Index>(times.size());
    if (n == 0) throw DataError("dataset: no samples");
    RowMatrix u(n, q), y(n, p);
    for (Index t = 0; t < n; ++t) {
        for (Index j = 0; j < q; ++j) u(t, j) = values[static_cast<std::size_t>(t * (q + p) + j)];
        for (Index j = 0; j < p; ++j) y(t, j) = values[static_cast<std::size_t>(t * (q + p) + q + j)];
    }
    double ts = 1.0;
    if (auto it = meta.find("sample_period"); it != meta.end()) {
        ts = parse_double(it->second, 0);
        meta.erase(it);
    } else if (n > 1) {
        ts = times[1] - times[0];
    }
    Dataset d(std::move(u), std::move(y), ts);
    d.metadata() = std::move(meta);
    return d;
}

inline Dataset read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open dataset '" + path + "'");
    return read(f);
}

} // namespace csv
} // namespace semid
