#include "fsad/model_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fsad/error.hpp"

namespace fsad {

namespace {

class Writer {
public:
    void bytes(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { u8(v & 0xFF); u8(v >> 8); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    std::vector<unsigned char> take() { return std::move(out_); }

private:
    std::vector<unsigned char> out_;
};

class Reader {
public:
    Reader(const std::vector<unsigned char>& b, const std::string& name) : b_(b), name_(name) {}
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw Error(name_ + ": truncated model artifact");
    }
    std::uint8_t u8() { need(1); return b_[pos_++]; }
    std::uint16_t u16() { auto lo = u8(); auto hi = u8(); return static_cast<std::uint16_t>(lo | (hi << 8)); }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f32() {
        const float f = std::bit_cast<float>(u32());
        if (!std::isfinite(f)) throw Error(name_ + ": non-finite value in model artifact");
        return f;
    }
    bool at_end() const { return pos_ == b_.size(); }
    std::size_t pos() const { return pos_; }

private:
    const std::vector<unsigned char>& b_;
    const std::string& name_;
    std::size_t pos_ = 0;
};

void put_matrix(Writer& w, const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(m(i, j));
}

Eigen::MatrixXd get_matrix(Reader& r, std::size_t rows, std::size_t cols) {
    r.need(4 * rows * cols);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f32();
    return m;
}

} // namespace

std::vector<unsigned char> encode_model(const FittedModel& model) {
    Writer w;
    w.bytes("CADN", 4);
    w.u8(1);
    w.u8(static_cast<std::uint8_t>(model.kind));
    w.u16(0);
    w.u32(static_cast<std::uint32_t>(model.grid_h));
    w.u32(static_cast<std::uint32_t>(model.grid_w));
    w.u32(static_cast<std::uint32_t>(model.feature_dim));
    if (model.kind == EstimatorKind::patchcore) {
        require(model.bank.has_value(), "patchcore model without memory bank");
        w.u32(0);
        w.u32(static_cast<std::uint32_t>(model.bank->size()));
        put_matrix(w, model.bank->items.transpose());
        return w.take();
    }
    require(model.field.has_value(), "gaussian model without field");
    const GaussianField& f = *model.field;
    const bool projected = model.kind == EstimatorKind::ortho;
    require(projected == f.projection.has_value(), "estimator tag and projection disagree");
    w.u32(projected ? static_cast<std::uint32_t>(f.dim) : 0);
    w.u32(0);
    if (projected) put_matrix(w, f.projection->matrix);
    for (std::size_t p = 0; p < f.positions(); ++p) {
        for (Eigen::Index i = 0; i < f.means[p].size(); ++i) w.f32(f.means[p](i));
        put_matrix(w, f.covariances[p]);
    }
    return w.take();
}

FittedModel decode_model(const std::vector<unsigned char>& bytes, const std::string& name) {
    if (bytes.size() < 28 || std::memcmp(bytes.data(), "CADN", 4) != 0) throw Error(name + ": bad CADN magic");
    Reader r(bytes, name);
    for (int i = 0; i < 4; ++i) r.u8();
    if (const auto v = r.u8(); v != 1) throw Error(name + ": unsupported CADN version " + std::to_string(v));
    const auto tag = r.u8();
    if (tag < 1 || tag > 3) throw Error(name + ": unknown estimator tag " + std::to_string(tag));
    r.u16();
    FittedModel m;
    m.kind = static_cast<EstimatorKind>(tag);
    m.grid_h = r.u32();
    m.grid_w = r.u32();
    m.feature_dim = r.u32();
    const std::size_t dp = r.u32(), n = r.u32();
    if (m.grid_h == 0 || m.grid_w == 0 || m.feature_dim == 0) throw Error(name + ": empty model dimensions");

    if (m.kind == EstimatorKind::patchcore) {
        if (n == 0) throw Error(name + ": empty memory bank");
        MemoryBank bank;
        bank.items = get_matrix(r, n, m.feature_dim).transpose();
        m.bank = std::move(bank);
    } else {
        GaussianField f;
        f.height = m.grid_h;
        f.width = m.grid_w;
        if (m.kind == EstimatorKind::ortho) {
            if (dp == 0 || dp > m.feature_dim) throw Error(name + ": invalid projection rank");
            f.projection = LowRankProjection{get_matrix(r, m.feature_dim, dp), 0};
            f.dim = dp;
        } else {
            f.dim = m.feature_dim;
        }
        const std::size_t P = f.height * f.width;
        r.need(4 * P * (f.dim + f.dim * f.dim));
        f.means.resize(P);
        f.covariances.resize(P);
        for (std::size_t p = 0; p < P; ++p) {
            f.means[p] = get_matrix(r, f.dim, 1).col(0);
            f.covariances[p] = get_matrix(r, f.dim, f.dim);
        }
        m.field = std::move(f);
    }
    if (!r.at_end()) throw Error(name + ": trailing bytes after model payload");
    return m;
}

void write_model(const std::filesystem::path& path, const FittedModel& model) {
    const auto bytes = encode_model(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FittedModel read_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open model '" + path.string() + "'");
    std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_model(bytes, path.string());
}

} // namespace fsad
