#include "crecl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "crecl/error.hpp"

namespace crecl {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'R', 'E', 'C', 'L', 'C', 'K', 'P'};

template <class T>
void put(std::string& out, T value)
{
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get()
    {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string take(std::size_t n)
    {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const
    {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("checkpoint truncated");
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

const Mat& Checkpoint::tensor(const std::string& name) const
{
    for (const auto& [n, m] : tensors) {
        if (n == name) {
            return m;
        }
    }
    throw FormatError("checkpoint has no tensor '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& checkpoint)
{
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string header = checkpoint.header.dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
    for (const auto& [name, m] : checkpoint.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
        out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes)
{
    Reader in(bytes);
    if (in.take(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
        throw FormatError("not a crecl checkpoint (bad magic)");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(in.take(in.get<std::uint32_t>()));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
    }
    const auto count = in.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = in.take(in.get<std::uint32_t>());
        const auto rows = in.get<std::uint64_t>();
        const auto cols = in.get<std::uint64_t>();
        if (rows > (1ULL << 32) || cols > (1ULL << 32)) {
            throw FormatError("corrupt checkpoint tensor shape");
        }
        Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        const std::string raw = in.take(static_cast<std::size_t>(rows * cols) * sizeof(double));
        std::memcpy(m.data(), raw.data(), raw.size());
        ck.tensors.emplace_back(std::move(name), std::move(m));
    }
    if (!in.done()) {
        throw FormatError("trailing bytes after checkpoint");
    }
    return ck;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    const std::string bytes = serialize_checkpoint(checkpoint);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

} // namespace crecl
