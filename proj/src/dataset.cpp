#include "gcoop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace gcoop {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'F', 'S'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kFlagAttrsMeaningful = 1u;

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& buf, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
}

class Reader {
public:
    Reader(const std::string& buf) : buf_(buf) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return v;
    }

    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }

    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    unsigned char byte() { return static_cast<unsigned char>(buf_[pos_++]); }

    void need(std::size_t k) {
        if (remaining() < k) raise(ErrorCode::TruncatedFile, "feature store ends mid-record");
    }

    const std::string& buf_;
    std::size_t pos_ = 0;
};

std::string meta_path(const std::string& path) { return path + ".meta.json"; }

std::vector<std::string> default_names(const char* prefix, std::uint32_t n) {
    std::vector<std::string> names;
    for (std::uint32_t i = 0; i < n; ++i) names.push_back(std::string(prefix) + std::to_string(i));
    return names;
}

DatasetMeta default_meta(std::uint32_t n_classes, std::uint32_t n_attrs) {
    DatasetMeta m;
    m.class_names = default_names("class", n_classes);
    m.attr_names = default_names("attr", n_attrs);
    m.class_templates = {"a photo of a {class}"};
    m.group_templates = {"a photo of a {class} with {attribute}"};
    return m;
}

// Draws unit directions and orthonormalizes them in draw order.
std::vector<std::vector<double>> orthonormal_directions(std::size_t count, std::size_t dim, Rng& rng) {
    std::vector<std::vector<double>> dirs;
    dirs.reserve(count);
    while (dirs.size() < count) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal();
        for (const auto& u : dirs) {
            const double p = dot(v, u);
            for (std::size_t i = 0; i < dim; ++i) v[i] -= p * u[i];
        }
        const double n = norm2(v);
        if (n < 1e-8) continue;  // redraw on a degenerate residual
        for (double& x : v) x /= n;
        dirs.push_back(std::move(v));
    }
    return dirs;
}

}  // namespace

bool GroupedDataset::has_attr_labels() const {
    return !attr_labels.empty() &&
           std::all_of(attr_labels.begin(), attr_labels.end(), [](std::int32_t a) { return a >= 0; });
}

std::uint32_t GroupedDataset::group_label(std::size_t i) const {
    if (attr_labels[i] < 0) raise(ErrorCode::UnknownAttributes, "sample has no attribute label");
    return class_labels[i] * n_attrs + static_cast<std::uint32_t>(attr_labels[i]);
}

std::vector<std::uint32_t> GroupedDataset::group_labels() const {
    std::vector<std::uint32_t> g(n());
    for (std::size_t i = 0; i < n(); ++i) g[i] = group_label(i);
    return g;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_classes == 0 || spec.n_attrs == 0)
        raise(ErrorCode::ConfigInvalid, "need at least one class and one attribute");
    if (spec.dim < spec.n_classes + spec.n_attrs)
        raise(ErrorCode::DimensionTooSmall, "dim must be >= n_classes + n_attrs");
    if (spec.rho < 0.0 || spec.rho > 1.0) raise(ErrorCode::ConfigInvalid, "rho must be in [0, 1]");
    if (spec.alpha < 0.0 || spec.beta < 0.0 || spec.sigma < 0.0)
        raise(ErrorCode::ConfigInvalid, "strengths must be >= 0");
    if (spec.n_train == 0 || spec.n_val == 0) raise(ErrorCode::ConfigInvalid, "empty train/val split");
    const std::size_t n_groups = static_cast<std::size_t>(spec.n_classes) * spec.n_attrs;
    const std::size_t per_group_test = spec.n_test / n_groups;
    if (per_group_test == 0) raise(ErrorCode::ConfigInvalid, "n_test smaller than the number of groups");

    Rng rng(spec.seed);
    const auto dirs = orthonormal_directions(spec.n_classes + spec.n_attrs, spec.dim, rng);
    const auto* class_dirs = dirs.data();
    const auto* attr_dirs = dirs.data() + spec.n_classes;

    auto draw_feature = [&](std::uint32_t y, std::uint32_t a, std::span<double> out) {
        for (std::size_t i = 0; i < spec.dim; ++i) {
            out[i] = spec.alpha * class_dirs[y][i] + spec.beta * attr_dirs[a][i] +
                     spec.sigma * rng.normal();
        }
        const double n = norm2(out);
        if (n > 1e-12)
            for (double& x : out) x /= n;
    };

    auto draw_attr = [&](std::uint32_t y) -> std::uint32_t {
        const std::uint32_t correlated = y % spec.n_attrs;
        if (spec.n_attrs == 1) return 0;
        if (rng.uniform() < spec.rho) return correlated;
        const std::uint32_t other = static_cast<std::uint32_t>(rng.uniform_index(spec.n_attrs - 1));
        return other >= correlated ? other + 1 : other;
    };

    auto make_split = [&](std::size_t count, const char* tag) {
        GroupedDataset ds;
        ds.features = Matrix(count, spec.dim);
        ds.class_labels.resize(count);
        ds.attr_labels.resize(count);
        ds.n_classes = spec.n_classes;
        ds.n_attrs = spec.n_attrs;
        ds.meta = default_meta(spec.n_classes, spec.n_attrs);
        std::ostringstream prov;
        prov << "synthetic classes=" << spec.n_classes << " attrs=" << spec.n_attrs
             << " rho=" << spec.rho << " alpha=" << spec.alpha << " beta=" << spec.beta
             << " sigma=" << spec.sigma << " seed=" << spec.seed;
        ds.meta.provenance = prov.str();
        ds.split_tag = tag;
        return ds;
    };

    SyntheticData data;
    data.train = make_split(spec.n_train, "train");
    data.val = make_split(spec.n_val, "val");
    data.test = make_split(per_group_test * n_groups, "test");

    for (GroupedDataset* ds : {&data.train, &data.val}) {
        for (std::size_t i = 0; i < ds->n(); ++i) {
            const auto y = static_cast<std::uint32_t>(rng.uniform_index(spec.n_classes));
            const std::uint32_t a = draw_attr(y);
            ds->class_labels[i] = y;
            ds->attr_labels[i] = static_cast<std::int32_t>(a);
            draw_feature(y, a, ds->features.row(i));
        }
    }
    std::size_t row = 0;
    for (std::size_t g = 0; g < n_groups; ++g) {
        const auto y = static_cast<std::uint32_t>(g / spec.n_attrs);
        const auto a = static_cast<std::uint32_t>(g % spec.n_attrs);
        for (std::size_t j = 0; j < per_group_test; ++j, ++row) {
            data.test.class_labels[row] = y;
            data.test.attr_labels[row] = static_cast<std::int32_t>(a);
            draw_feature(y, a, data.test.features.row(row));
        }
    }
    return data;
}

void save_store(const GroupedDataset& ds, const std::string& path) {
    if (ds.n() == 0) raise(ErrorCode::CountMismatch, "refusing to save an empty dataset");
    require_finite(ds.features.flat(), "dataset features");

    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kFormatVersion);
    put_u64(buf, ds.n());
    put_u32(buf, static_cast<std::uint32_t>(ds.dim()));
    put_u32(buf, ds.n_classes);
    put_u32(buf, ds.n_attrs);
    const bool any_attr = std::any_of(ds.attr_labels.begin(), ds.attr_labels.end(),
                                      [](std::int32_t a) { return a >= 0; });
    put_u32(buf, any_attr ? kFlagAttrsMeaningful : 0u);
    for (std::uint32_t y : ds.class_labels) put_u32(buf, y);
    for (std::int32_t a : ds.attr_labels) put_u32(buf, static_cast<std::uint32_t>(a));
    for (double x : ds.features.values()) put_f32(buf, static_cast<float>(x));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) raise(ErrorCode::IoError, "short write to '" + path + "'");
    out.close();

    nlohmann::json meta{
        {"class_names", ds.meta.class_names},
        {"attr_names", ds.meta.attr_names},
        {"class_templates", ds.meta.class_templates},
        {"group_templates", ds.meta.group_templates},
        {"provenance", ds.meta.provenance},
        {"split", ds.split_tag},
    };
    std::ofstream mout(meta_path(path), std::ios::binary | std::ios::trunc);
    if (!mout) raise(ErrorCode::IoError, "cannot open '" + meta_path(path) + "' for writing");
    mout << meta.dump(2) << "\n";
}

GroupedDataset load_store(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
        raise(ErrorCode::BadMagic, "'" + path + "' is not a GCFS feature store");
    std::string body = buf.substr(4);
    Reader r(body);
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion)
        raise(ErrorCode::UnsupportedVersion, "GCFS version " + std::to_string(version));
    const std::uint64_t n = r.u64();
    const std::uint32_t dim = r.u32();
    const std::uint32_t n_classes = r.u32();
    const std::uint32_t n_attrs = r.u32();
    const std::uint32_t flags = r.u32();
    if (n == 0) raise(ErrorCode::CountMismatch, "feature store holds zero samples");
    if (dim == 0 || n_classes == 0 || n_attrs == 0)
        raise(ErrorCode::CountMismatch, "feature store header has a zero dimension/count");
    const std::uint64_t required = n * 8u + n * static_cast<std::uint64_t>(dim) * 4u;
    if (r.remaining() < required)
        raise(ErrorCode::TruncatedFile, "header promises " + std::to_string(n) +
                                            " samples but the payload is short");
    if (r.remaining() > required)
        raise(ErrorCode::CountMismatch,
              std::to_string(r.remaining() - required) + " trailing bytes in store");

    GroupedDataset ds;
    ds.n_classes = n_classes;
    ds.n_attrs = n_attrs;
    ds.class_labels.resize(n);
    ds.attr_labels.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        ds.class_labels[i] = r.u32();
        if (ds.class_labels[i] >= n_classes)
            raise(ErrorCode::CountMismatch, "class label outside [0, n_classes)");
    }
    const bool attrs_meaningful = (flags & kFlagAttrsMeaningful) != 0;
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::int32_t a = r.i32();
        if (a < -1 || a >= static_cast<std::int32_t>(n_attrs))
            raise(ErrorCode::CountMismatch, "attribute label outside [-1, n_attrs)");
        ds.attr_labels[i] = attrs_meaningful ? a : -1;
    }
    ds.features = Matrix(n, dim);
    for (double& x : ds.features.values()) x = static_cast<double>(r.f32());
    require_finite(ds.features.flat(), "loaded features");

    ds.meta = default_meta(n_classes, n_attrs);
    const std::string mp = meta_path(path);
    if (std::filesystem::exists(mp)) {
        std::ifstream min(mp);
        nlohmann::json meta;
        try {
            min >> meta;
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorCode::IoError, "bad metadata sidecar: " + std::string(e.what()));
        }
        if (meta.contains("class_names")) ds.meta.class_names = meta["class_names"].get<std::vector<std::string>>();
        if (meta.contains("attr_names")) ds.meta.attr_names = meta["attr_names"].get<std::vector<std::string>>();
        if (meta.contains("class_templates"))
            ds.meta.class_templates = meta["class_templates"].get<std::vector<std::string>>();
        if (meta.contains("group_templates"))
            ds.meta.group_templates = meta["group_templates"].get<std::vector<std::string>>();
        if (meta.contains("provenance")) ds.meta.provenance = meta["provenance"].get<std::string>();
        if (meta.contains("split")) ds.split_tag = meta["split"].get<std::string>();
        if (ds.meta.class_names.size() != n_classes)
            raise(ErrorCode::CountMismatch, "sidecar class_names count != header n_classes");
        if (ds.meta.attr_names.size() != n_attrs)
            raise(ErrorCode::CountMismatch, "sidecar attr_names count != header n_attrs");
    }
    return ds;
}

GroupStats group_stats(const GroupedDataset& ds) {
    if (!ds.has_attr_labels()) raise(ErrorCode::UnknownAttributes, "group_stats needs attribute labels");
    GroupStats st;
    st.counts.assign(ds.n_groups(), 0);
    for (std::size_t i = 0; i < ds.n(); ++i) st.counts[ds.group_label(i)] += 1;
    st.proportions.resize(st.counts.size());
    const double total = static_cast<double>(ds.n());
    for (std::size_t g = 0; g < st.counts.size(); ++g)
        st.proportions[g] = static_cast<double>(st.counts[g]) / total;
    return st;
}

GroupedDataset take_rows(const GroupedDataset& ds, const std::vector<std::size_t>& rows) {
    GroupedDataset out;
    out.features = Matrix(rows.size(), ds.dim());
    out.class_labels.resize(rows.size());
    out.attr_labels.resize(rows.size());
    out.n_classes = ds.n_classes;
    out.n_attrs = ds.n_attrs;
    out.meta = ds.meta;
    out.split_tag = ds.split_tag;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t src = rows[i];
        if (src >= ds.n()) raise(ErrorCode::IndexOutOfRange, "take_rows index");
        std::copy(ds.features.row(src).begin(), ds.features.row(src).end(), out.features.row(i).begin());
        out.class_labels[i] = ds.class_labels[src];
        out.attr_labels[i] = ds.attr_labels[src];
    }
    return out;
}

GroupedDataset subsample(const GroupedDataset& ds, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) raise(ErrorCode::ConfigInvalid, "fraction must be in (0, 1]");
    if (!ds.has_attr_labels()) raise(ErrorCode::UnknownAttributes, "subsample needs group labels");

    std::vector<std::vector<std::size_t>> by_group(ds.n_groups());
    for (std::size_t i = 0; i < ds.n(); ++i) by_group[ds.group_label(i)].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> keep;
    for (auto& idx : by_group) {
        if (idx.empty()) continue;
        const auto want = static_cast<std::size_t>(
            std::max<long>(1, std::lround(fraction * static_cast<double>(idx.size()))));
        const std::size_t k = std::min(want, idx.size());
        // seeded Fisher-Yates, take the first k
        for (std::size_t i = idx.size() - 1; i > 0; --i) {
            const std::size_t j = rng.uniform_index(i + 1);
            std::swap(idx[i], idx[j]);
        }
        keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::sort(keep.begin(), keep.end());
    return take_rows(ds, keep);
}

}  // namespace gcoop
