#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fields.hpp"

namespace mfg {

using json = nlohmann::json;

/// Provenance stamped into every output file.
struct RunStamp {
    std::string config_hash;
    std::uint64_t seed = 0;
};

/// FNV-1a over the canonical dump of a JSON document.
inline std::string config_hash(const json& config)
{
    const std::string s = config.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline json grid_json(const Grid& g)
{
    json j;
    j["dim"] = g.dim();
    json ext = json::array();
    for (int a = 0; a < g.dim(); ++a) ext.push_back({g.extent(a).lo, g.extent(a).hi});
    j["extent"] = ext;
    j["n_cells"] = g.n_cells();
    j["T"] = g.T();
    j["n_time"] = g.n_time();
    return j;
}

inline GridPtr grid_from_json(const json& j)
{
    std::vector<Interval> ext;
    for (const auto& e : j.at("extent")) ext.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
    return make_grid(ext, j.at("n_cells").get<std::vector<int>>(), j.at("T").get<double>(), j.at("n_time").get<int>());
}

// Container layout: "MFGF", u32 version, u64 metadata length, metadata (JSON text),
// u64 value count, values as little-endian IEEE doubles.
inline constexpr char container_magic[4] = {'M', 'F', 'G', 'F'};
inline constexpr std::uint32_t container_version = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v)
{
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::istream& is)
{
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = is.get();
        if (c == EOF) throw IoError("truncated container");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace detail

struct Container {
    json meta;
    std::vector<double> values;
};

inline void write_container(const std::filesystem::path& path, const Container& c)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(container_magic, 4);
    detail::put_le<std::uint32_t>(os, container_version);
    const std::string meta = c.meta.dump();
    detail::put_le<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::put_le<std::uint64_t>(os, c.values.size());
    for (double x : c.values) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(x));
    if (!os) throw IoError("write failed for " + path.string());
}

inline Container read_container(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, container_magic, 4) != 0) throw IoError(path.string() + " is not a field container");
    const auto version = detail::get_le<std::uint32_t>(is);
    if (version != container_version) throw IoError("unsupported container version " + std::to_string(version));
    const auto len = detail::get_le<std::uint64_t>(is);
    std::string meta(len, '\0');
    if (!is.read(meta.data(), static_cast<std::streamsize>(len))) throw IoError("truncated container metadata");
    Container c;
    try {
        c.meta = json::parse(meta);
    } catch (const json::exception& e) {
        throw IoError(std::string("corrupt container metadata: ") + e.what());
    }
    const auto count = detail::get_le<std::uint64_t>(is);
    c.values.resize(count);
    for (auto& x : c.values) x = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
    return c;
}

inline json field_meta(const Grid& g, const std::string& kind, int components, const RunStamp& stamp,
                       const std::string& tag = {})
{
    json m = grid_json(g);
    m["kind"] = kind;
    m["components"] = components;
    m["config_hash"] = stamp.config_hash;
    m["seed"] = stamp.seed;
    if (!tag.empty()) m["tag"] = tag;
    return m;
}

inline void save(const std::filesystem::path& p, const ScalarField& f, const RunStamp& s, const std::string& tag = {})
{
    write_container(p, {field_meta(f.grid(), "scalar", 1, s, tag), f.values()});
}

inline void save(const std::filesystem::path& p, const VectorField& f, const RunStamp& s, const std::string& tag = {})
{
    write_container(p, {field_meta(f.grid(), "vector", f.dim(), s, tag), f.values()});
}

/// Real part first, then the imaginary part when present; slowest index is the time level.
inline void save(const std::filesystem::path& p, const SpaceTimeField& f, const RunStamp& s, const std::string& tag = {})
{
    json m = field_meta(f.grid(), "spacetime", 1, s, tag);
    m["complex"] = f.is_complex();
    std::vector<double> v = f.real_values();
    v.insert(v.end(), f.imag_values().begin(), f.imag_values().end());
    write_container(p, {m, std::move(v)});
}

inline void save(const std::filesystem::path& p, const BoundaryData& b, const RunStamp& s, const std::string& tag = {})
{
    json m = field_meta(b.grid(), "boundary", b.components(), s, tag);
    m["boundary_kind"] = to_string(b.kind());
    write_container(p, {m, b.values()});
}

inline void require_kind(const Container& c, const std::string& kind)
{
    if (c.meta.value("kind", "") != kind) throw IoError("container holds '" + c.meta.value("kind", "") + "', expected '" + kind + "'");
}

inline ScalarField load_scalar(const std::filesystem::path& p)
{
    const Container c = read_container(p);
    require_kind(c, "scalar");
    return ScalarField(grid_from_json(c.meta), c.values);
}

inline VectorField load_vector(const std::filesystem::path& p)
{
    const Container c = read_container(p);
    require_kind(c, "vector");
    return VectorField(grid_from_json(c.meta), c.values);
}

inline SpaceTimeField load_spacetime(const std::filesystem::path& p)
{
    const Container c = read_container(p);
    require_kind(c, "spacetime");
    const GridPtr g = grid_from_json(c.meta);
    const std::size_t n = g->node_count() * static_cast<std::size_t>(g->n_levels());
    if (c.values.size() != (c.meta.value("complex", false) ? 2 * n : n)) throw IoError("space-time container size mismatch");
    std::vector<double> re(c.values.begin(), c.values.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<double> im(c.values.begin() + static_cast<std::ptrdiff_t>(n), c.values.end());
    return SpaceTimeField(g, std::move(re), std::move(im));
}

inline BoundaryData load_boundary(const std::filesystem::path& p)
{
    const Container c = read_container(p);
    require_kind(c, "boundary");
    const std::string k = c.meta.value("boundary_kind", "");
    BoundaryKind kind = BoundaryKind::Trace;
    if (k == to_string(BoundaryKind::NormalDerivative)) kind = BoundaryKind::NormalDerivative;
    else if (k == to_string(BoundaryKind::Gradient)) kind = BoundaryKind::Gradient;
    return BoundaryData(grid_from_json(c.meta), kind, c.values);
}

/// Shortest round-trip decimal form.
inline std::string fmt(double x)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

/// CSV writer: stamp comment line, header row, data rows.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const RunStamp& stamp, const std::vector<std::string>& header)
        : os_(path), path_(path)
    {
        if (!os_) throw IoError("cannot open " + path.string() + " for writing");
        os_ << "# config_hash=" << stamp.config_hash << " seed=" << stamp.seed << '\n';
        row_strings(header);
    }
    void row(const std::vector<double>& v)
    {
        std::vector<std::string> s;
        for (double x : v) s.push_back(fmt(x));
        row_strings(s);
    }
    void row_strings(const std::vector<std::string>& v)
    {
        for (std::size_t i = 0; i < v.size(); ++i) os_ << (i ? "," : "") << v[i];
        os_ << '\n';
        if (!os_) throw IoError("write failed for " + path_.string());
    }

private:
    std::ofstream os_;
    std::filesystem::path path_;
};

/// One row per node: coordinates then value(s).
inline void write_csv(const std::filesystem::path& p, const ScalarField& f, const RunStamp& s, const std::string& name = "value")
{
    const Grid& g = f.grid();
    std::vector<std::string> header{"x"};
    if (g.dim() == 2) header.push_back("y");
    header.push_back(name);
    CsvWriter w(p, s, header);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        const Point x = g.point(i);
        std::vector<double> r{x[0]};
        if (g.dim() == 2) r.push_back(x[1]);
        r.push_back(f[i]);
        w.row(r);
    }
}

inline void write_csv(const std::filesystem::path& p, const VectorField& f, const RunStamp& s)
{
    const Grid& g = f.grid();
    std::vector<std::string> header{"x"};
    if (g.dim() == 2) header.insert(header.end(), {"y", "v0", "v1"});
    else header.push_back("v0");
    CsvWriter w(p, s, header);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        const Point x = g.point(i);
        std::vector<double> r{x[0]};
        if (g.dim() == 2) r.push_back(x[1]);
        for (int a = 0; a < g.dim(); ++a) r.push_back(f.at(i, a));
        w.row(r);
    }
}

}  // namespace mfg
