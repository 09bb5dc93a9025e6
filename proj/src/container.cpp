#include "eqxai/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "eqxai/errors.hpp"

namespace eqxai {

namespace {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

constexpr char kMagic[6] = {'E', 'Q', 'X', 'A', 'I', '1'};

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw FormatError("truncated container");
    }
    return v;
}

std::string get_str(std::istream& in) {
    const auto n = get<std::uint32_t>(in);
    if (n > (1u << 24)) {
        throw FormatError("implausible string length in container");
    }
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), n)) {
        throw FormatError("truncated container");
    }
    return s;
}

} // namespace

const autodiff::Tensor& Container::tensor(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t.value;
    }
    throw FormatError("container has no tensor named " + name);
}

const std::string& Container::meta_value(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw FormatError("container has no meta key " + key);
    }
    return it->second;
}

void write_container(std::ostream& out, const Container& c) {
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kContainerVersion);
    put_str(out, c.kind);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.meta.size()));
    for (const auto& [k, v] : c.meta) {
        put_str(out, k);
        put_str(out, v);
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        put_str(out, t.name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.dims.size()));
        for (auto d : t.value.dims) put<std::uint64_t>(out, d);
    }
    for (const auto& t : c.tensors) {
        out.write(reinterpret_cast<const char*>(t.value.values.data()),
                  static_cast<std::streamsize>(t.value.values.size() * sizeof(double)));
    }
    if (!out) {
        throw FormatError("failed to write container");
    }
}

Container read_container(std::istream& in) {
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw FormatError("not an EQXAI1 container");
    }
    const auto version = get<std::uint32_t>(in);
    if (version != kContainerVersion) {
        throw FormatError("unsupported container version " + std::to_string(version));
    }
    Container c;
    c.kind = get_str(in);
    const auto n_meta = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto key = get_str(in);
        c.meta[key] = get_str(in);
    }
    const auto n_tensors = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        autodiff::NamedTensor t;
        t.name = get_str(in);
        const auto rank = get<std::uint32_t>(in);
        if (rank > 16) {
            throw FormatError("implausible tensor rank in container");
        }
        for (std::uint32_t r = 0; r < rank; ++r) {
            t.value.dims.push_back(static_cast<std::size_t>(get<std::uint64_t>(in)));
        }
        c.tensors.push_back(std::move(t));
    }
    for (auto& t : c.tensors) {
        t.value.values.resize(autodiff::element_count(t.value.dims));
        const auto bytes = static_cast<std::streamsize>(t.value.values.size() * sizeof(double));
        if (bytes > 0 && !in.read(reinterpret_cast<char*>(t.value.values.data()), bytes)) {
            throw FormatError("truncated tensor payload for " + t.name);
        }
    }
    return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    write_container(out, c);
}

Container load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return read_container(in);
}

} // namespace eqxai
