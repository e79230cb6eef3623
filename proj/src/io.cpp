#include <dynspike/io.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

namespace dynspike::io {

ParseError::ParseError(std::string source, int line, int column, std::string pointer,
                       const std::string& message)
    : InvalidArgument(source + ":" + std::to_string(line) + ":" + std::to_string(column) +
                      ": " + (pointer.empty() ? "" : pointer + ": ") + message),
      m_source(std::move(source)), m_line(line), m_column(column),
      m_pointer(std::move(pointer))
{
}

FieldError::FieldError(std::string pointer, const std::string& message)
    : InvalidArgument(message), m_pointer(std::move(pointer))
{
}

// --- located parsing ---------------------------------------------------------------

namespace {

std::string escape_token(std::string_view key)
{
    std::string out;
    for (char c : key)
    {
        if (c == '~')
        {
            out += "~0";
        }
        else if (c == '/')
        {
            out += "~1";
        }
        else
        {
            out += c;
        }
    }
    return out;
}

/// Character iterator that publishes how far the parser has read.
class TrackedIterator
{
public:
    using iterator_category = std::input_iterator_tag;
    using value_type        = char;
    using difference_type   = std::ptrdiff_t;
    using pointer           = const char*;
    using reference         = const char&;

    TrackedIterator(const char* p, const char** cursor) : m_p(p), m_cursor(cursor) {}

    reference operator*() const { return *m_p; }
    TrackedIterator& operator++()
    {
        *m_cursor = ++m_p;
        return *this;
    }
    TrackedIterator operator++(int)
    {
        TrackedIterator old = *this;
        ++*this;
        return old;
    }
    bool operator==(const TrackedIterator& o) const { return m_p == o.m_p; }
    bool operator!=(const TrackedIterator& o) const { return m_p != o.m_p; }

private:
    const char* m_p;
    const char** m_cursor;
};

class LocatingSax
{
public:
    using number_integer_t  = json::number_integer_t;
    using number_unsigned_t = json::number_unsigned_t;
    using number_float_t    = json::number_float_t;
    using string_t          = json::string_t;
    using binary_t          = json::binary_t;

    LocatingSax(json& root, const char* begin, const char** cursor,
                std::map<std::string, std::size_t>& offsets)
        : m_dom(root, true), m_begin(begin), m_cursor(cursor), m_offsets(offsets)
    {
    }

    bool null() { return value([&] { return m_dom.null(); }); }
    bool boolean(bool b) { return value([&] { return m_dom.boolean(b); }); }
    bool number_integer(number_integer_t v)
    {
        return value([&] { return m_dom.number_integer(v); });
    }
    bool number_unsigned(number_unsigned_t v)
    {
        return value([&] { return m_dom.number_unsigned(v); });
    }
    bool number_float(number_float_t v, const string_t& s)
    {
        return value([&] { return m_dom.number_float(v, s); });
    }
    bool string(string_t& s) { return value([&] { return m_dom.string(s); }); }
    bool binary(binary_t& b) { return value([&] { return m_dom.binary(b); }); }

    bool start_object(std::size_t n)
    {
        record();
        m_stack.push_back(Frame{false, 0, {}});
        return m_dom.start_object(n);
    }
    bool key(string_t& k)
    {
        m_stack.back().key = k;
        return m_dom.key(k);
    }
    bool end_object()
    {
        m_stack.pop_back();
        advance();
        return m_dom.end_object();
    }
    bool start_array(std::size_t n)
    {
        record();
        m_stack.push_back(Frame{true, 0, {}});
        return m_dom.start_array(n);
    }
    bool end_array()
    {
        m_stack.pop_back();
        advance();
        return m_dom.end_array();
    }
    template <typename Exception>
    bool parse_error(std::size_t position, const std::string&, const Exception& ex)
    {
        error_position = position;
        error_message  = ex.what();
        return false;
    }

    std::size_t error_position = 0;
    std::string error_message;

private:
    struct Frame
    {
        bool array;
        std::size_t index;
        std::string key;
    };

    template <typename F>
    bool value(F&& f)
    {
        record();
        const bool ok = f();
        advance();
        return ok;
    }
    void record()
    {
        std::string path;
        for (const auto& f : m_stack)
        {
            path += '/';
            path += f.array ? std::to_string(f.index) : escape_token(f.key);
        }
        const auto off = static_cast<std::size_t>(*m_cursor - m_begin);
        m_offsets.emplace(std::move(path), off == 0 ? 0 : off - 1);
    }
    void advance()
    {
        if (!m_stack.empty() && m_stack.back().array)
        {
            ++m_stack.back().index;
        }
    }

    nlohmann::detail::json_sax_dom_parser<json> m_dom;
    const char* m_begin;
    const char** m_cursor;
    std::map<std::string, std::size_t>& m_offsets;
    std::vector<Frame> m_stack;
};

Document::Position position_of(std::string_view text, std::size_t offset)
{
    offset = std::min(offset, text.size());
    Document::Position p{1, 1};
    for (std::size_t i = 0; i < offset; ++i)
    {
        if (text[i] == '\n')
        {
            ++p.line;
            p.column = 1;
        }
        else
        {
            ++p.column;
        }
    }
    return p;
}

// Offsets of scalars are recorded after the lexer has consumed the token;
// walk back to its first character.
std::size_t token_start(std::string_view text, std::size_t off)
{
    if (text.empty())
    {
        return 0;
    }
    off = std::min(off, text.size() - 1);
    if (text[off] == '{' || text[off] == '[')
    {
        return off;
    }
    auto trailing = [](char c) {
        return std::isspace(static_cast<unsigned char>(c)) || c == ',' || c == ':' ||
               c == '}' || c == ']';
    };
    while (off > 0 && trailing(text[off]))
    {
        --off;
    }
    if (text[off] == '"')
    {
        while (off > 0)
        {
            --off;
            if (text[off] == '"' && (off == 0 || text[off - 1] != '\\'))
            {
                return off;
            }
        }
        return off;
    }
    auto in_token = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.';
    };
    while (off > 0 && in_token(text[off - 1]))
    {
        --off;
    }
    return off;
}

} // namespace

Document Document::parse(std::string_view text, std::string source)
{
    Document doc;
    doc.m_source = std::move(source);
    const char* begin  = text.data();
    const char* cursor = begin;
    std::map<std::string, std::size_t> offsets;
    LocatingSax sax(doc.m_value, begin, &cursor, offsets);
    const bool ok = json::sax_parse(TrackedIterator(begin, &cursor),
                                    TrackedIterator(begin + text.size(), &cursor), &sax);
    if (!ok)
    {
        const std::size_t at = sax.error_position == 0 ? 0 : sax.error_position - 1;
        const Position p     = position_of(text, at);
        std::string msg      = sax.error_message;
        if (const auto cut = msg.find(": syntax error"); cut != std::string::npos)
        {
            msg = msg.substr(cut + 2);
        }
        throw ParseError(doc.m_source, p.line, p.column, "", msg);
    }
    for (const auto& [path, off] : offsets)
    {
        doc.m_positions.emplace(path, position_of(text, token_start(text, off)));
    }
    return doc;
}

Document Document::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw ParseError(path.string(), 0, 0, "", "cannot open file");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

Document::Position Document::locate(const std::string& pointer) const
{
    std::string p = pointer;
    while (true)
    {
        if (const auto it = m_positions.find(p); it != m_positions.end())
        {
            return it->second;
        }
        if (p.empty())
        {
            return {};
        }
        p.erase(p.rfind('/'));
    }
}

// --- field access ------------------------------------------------------------------------

namespace {

class Node
{
public:
    Node(const json& j, std::string path) : m_j(j), m_path(std::move(path)) {}

    const json& raw() const { return m_j; }
    const std::string& path() const { return m_path; }

    [[noreturn]] void fail(const std::string& message) const
    {
        throw FieldError(m_path, message);
    }

    void require_object() const
    {
        if (!m_j.is_object())
        {
            fail("expected an object");
        }
    }
    bool has(const char* key) const { return m_j.is_object() && m_j.contains(key); }
    Node field(const char* key) const
    {
        require_object();
        if (!m_j.contains(key))
        {
            fail(std::string("missing field '") + key + "'");
        }
        return Node(m_j.at(key), m_path + "/" + escape_token(key));
    }
    std::size_t size() const
    {
        if (!m_j.is_array())
        {
            fail("expected an array");
        }
        return m_j.size();
    }
    Node operator[](std::size_t i) const
    {
        return Node(m_j.at(i), m_path + "/" + std::to_string(i));
    }

    double number() const
    {
        if (!m_j.is_number())
        {
            fail("expected a number");
        }
        const double v = m_j.get<double>();
        if (!std::isfinite(v))
        {
            fail("expected a finite number");
        }
        return v;
    }
    int integer() const
    {
        if (!m_j.is_number_integer())
        {
            fail("expected an integer");
        }
        const auto v = m_j.get<std::int64_t>();
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        {
            fail("integer out of range");
        }
        return static_cast<int>(v);
    }
    std::uint64_t unsigned_integer() const
    {
        if (!m_j.is_number_integer() || m_j.get<std::int64_t>() < 0)
        {
            fail("expected a nonnegative integer");
        }
        return m_j.get<std::uint64_t>();
    }
    bool boolean() const
    {
        if (!m_j.is_boolean())
        {
            fail("expected true or false");
        }
        return m_j.get<bool>();
    }
    std::string string() const
    {
        if (!m_j.is_string())
        {
            fail("expected a string");
        }
        return m_j.get<std::string>();
    }
    Vector vector() const
    {
        const std::size_t n = size();
        Vector v(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
        {
            v[static_cast<Eigen::Index>(i)] = (*this)[i].number();
        }
        return v;
    }
    Complex complex() const
    {
        if (m_j.is_number())
        {
            return {number(), 0.0};
        }
        if (size() != 2)
        {
            fail("expected [re, im]");
        }
        return {(*this)[0].number(), (*this)[1].number()};
    }

    template <typename T>
    void optional(const char* key, T& out) const
    {
        if (!has(key))
        {
            return;
        }
        const Node n = field(key);
        if constexpr (std::is_same_v<T, double>)
        {
            out = n.number();
        }
        else if constexpr (std::is_same_v<T, int>)
        {
            out = n.integer();
        }
        else if constexpr (std::is_same_v<T, bool>)
        {
            out = n.boolean();
        }
        else if constexpr (std::is_same_v<T, std::uint64_t>)
        {
            out = n.unsigned_integer();
        }
        else
        {
            static_assert(sizeof(T) == 0, "unsupported field type");
        }
    }

private:
    const json& m_j;
    std::string m_path;
};

/// Runs f and reports library validation errors at the node's path.
template <typename F>
auto guarded(const Node& n, F&& f)
{
    try
    {
        return f();
    }
    catch (const FieldError&)
    {
        throw;
    }
    catch (const InvalidArgument& e)
    {
        n.fail(e.what());
    }
    catch (const DomainError& e)
    {
        n.fail(e.what());
    }
}

json complex_json(Complex c) { return json::array({c.real(), c.imag()}); }

json vector_json(const Vector& v) { return json(std::vector<double>(v.begin(), v.end())); }

TimeGrid grid_from(const Node& n, int default_dim)
{
    int dim = default_dim;
    n.optional("d", dim);
    const int K      = n.field("K").integer();
    const double tau = n.field("tau").number();
    return guarded(n, [&] { return TimeGrid(K, tau, dim); });
}

std::vector<Particle> particles_from(const Node& n, int dim)
{
    const Node list = n.field("particles");
    std::vector<Particle> out;
    for (std::size_t i = 0; i < list.size(); ++i)
    {
        const Node p = list[i];
        Particle q{p.field("x").vector(), p.field("v").vector(), p.field("w").number()};
        if (q.position.size() != dim || q.velocity.size() != dim)
        {
            p.fail("x and v must have " + std::to_string(dim) + " entries");
        }
        out.push_back(std::move(q));
    }
    return out;
}

json particles_json(std::span<const Particle> ps)
{
    json out = json::array();
    for (const auto& p : ps)
    {
        out.push_back({{"x", vector_json(p.position)},
                       {"v", vector_json(p.velocity)},
                       {"w", p.weight}});
    }
    return out;
}

} // namespace

// --- phase space and measurements ------------------------------------------------------

json to_json(const Configuration& cfg)
{
    return {{"tau", cfg.grid().tau()},
            {"K", cfg.grid().K()},
            {"d", cfg.grid().dim()},
            {"particles", particles_json(cfg.particles())}};
}

Configuration configuration_from_json(const json& j)
{
    const Node n(j, "");
    const TimeGrid grid = grid_from(n, 1);
    auto ps             = particles_from(n, grid.dim());
    for (std::size_t i = 0; i < ps.size(); ++i)
    {
        if (!in_domain(ps[i].position, ps[i].velocity, grid))
        {
            throw FieldError("/particles/" + std::to_string(i),
                             "particle leaves [0,1]^d during the window");
        }
    }
    return guarded(n.field("particles"), [&] { return Configuration(grid, std::move(ps)); });
}

json to_json(const Reconstruction& r, const TimeGrid& grid)
{
    return {{"tau", grid.tau()},
            {"K", grid.K()},
            {"d", grid.dim()},
            {"particles", particles_json(r.particles)},
            {"residual_norm", r.residual_norm},
            {"iterations", r.iterations},
            {"converged", r.converged}};
}

Reconstruction reconstruction_from_json(const json& j)
{
    const Node n(j, "");
    const TimeGrid grid = grid_from(n, 1);
    Reconstruction r;
    r.particles     = particles_from(n, grid.dim());
    r.residual_norm = n.field("residual_norm").number();
    r.iterations    = n.field("iterations").integer();
    r.converged     = n.field("converged").boolean();
    return r;
}

json to_json(const StaticReconstruction& r, int frame)
{
    json spikes = json::array();
    for (const auto& s : r.spikes)
    {
        spikes.push_back({{"x", s.position}, {"w", s.weight}});
    }
    return {{"frame", frame},
            {"spikes", spikes},
            {"residual_norm", r.residual_norm},
            {"iterations", r.iterations},
            {"converged", r.converged}};
}

json to_json(const MeasurementTensor& y)
{
    json data = json::array();
    for (const auto& c : y.data())
    {
        data.push_back(complex_json(c));
    }
    return {{"f_c", y.cutoff()}, {"K", y.grid().K()}, {"tau", y.grid().tau()}, {"data", data}};
}

MeasurementTensor measurements_from_json(const json& j)
{
    const Node n(j, "");
    const int cutoff    = n.field("f_c").integer();
    const TimeGrid grid = grid_from(n, 1);
    const Node data     = n.field("data");
    if (cutoff < 1)
    {
        n.field("f_c").fail("f_c must be >= 1");
    }
    const auto expected =
        static_cast<std::size_t>(2 * cutoff + 1) * static_cast<std::size_t>(grid.frame_count());
    if (data.size() != expected)
    {
        data.fail("expected " + std::to_string(expected) + " entries, found " +
                  std::to_string(data.size()));
    }
    Eigen::VectorXcd v(static_cast<Eigen::Index>(expected));
    for (std::size_t i = 0; i < expected; ++i)
    {
        v[static_cast<Eigen::Index>(i)] = data[i].complex();
    }
    return MeasurementTensor(cutoff, grid, std::move(v));
}

json to_json(const FrameStack& s)
{
    json frames = json::array();
    for (const auto& f : s.frames)
    {
        std::vector<double> flat;
        flat.reserve(static_cast<std::size_t>(f.size()));
        for (Eigen::Index r = 0; r < f.rows(); ++r)
        {
            for (Eigen::Index c = 0; c < f.cols(); ++c)
            {
                flat.push_back(f(r, c));
            }
        }
        frames.push_back(std::move(flat));
    }
    return {{"width", s.pixels.width},
            {"height", s.pixels.height},
            {"pitch_mm", s.pixels.pitch},
            {"sigma", s.sigma},
            {"K", s.grid.K()},
            {"tau", s.grid.tau()},
            {"frames", frames}};
}

FrameStack frames_from_json(const json& j)
{
    const Node n(j, "");
    FrameStack s;
    s.pixels.width  = n.field("width").integer();
    s.pixels.height = n.field("height").integer();
    s.pixels.pitch  = n.field("pitch_mm").number();
    s.sigma         = n.field("sigma").number();
    if (s.pixels.width < 1 || s.pixels.height < 1)
    {
        n.fail("width and height must be >= 1");
    }
    if (!(s.pixels.pitch > 0.0) || !(s.sigma > 0.0))
    {
        n.fail("pitch_mm and sigma must be positive");
    }
    s.grid            = grid_from(n, 2);
    const Node frames = n.field("frames");
    if (frames.size() != static_cast<std::size_t>(s.grid.frame_count()))
    {
        frames.fail("expected " + std::to_string(s.grid.frame_count()) + " frames");
    }
    const auto count = static_cast<std::size_t>(s.pixels.pixel_count());
    for (std::size_t k = 0; k < frames.size(); ++k)
    {
        const Node f = frames[k];
        if (f.size() != count)
        {
            f.fail("expected " + std::to_string(count) + " pixels");
        }
        Eigen::MatrixXd m(s.pixels.height, s.pixels.width);
        for (std::size_t i = 0; i < count; ++i)
        {
            m(static_cast<Eigen::Index>(i) / s.pixels.width,
              static_cast<Eigen::Index>(i) % s.pixels.width) = f[i].number();
        }
        s.frames.push_back(std::move(m));
    }
    return s;
}

// --- certificates ------------------------------------------------------------------------

json to_json(const DynamicalCertificate& cert)
{
    json frames = json::array();
    for (const auto& f : cert.frames())
    {
        json c = json::array();
        for (const auto& v : f.coefficients())
        {
            c.push_back(complex_json(v));
        }
        json gamma = json::array();
        for (const auto& v : f.values())
        {
            gamma.push_back(complex_json(v));
        }
        frames.push_back({{"k", f.frame()}, {"c", c}, {"nodes", f.nodes()}, {"gamma", gamma}});
    }
    return {{"K_set", cert.frame_set()},
            {"f_c", cert.cutoff()},
            {"K", cert.grid().K()},
            {"tau", cert.grid().tau()},
            {"frames", frames}};
}

json to_json(const VerificationReport& r)
{
    json ghosts = json::array();
    for (const auto& g : r.ghosts)
    {
        ghosts.push_back({{"x", g.position}, {"v", g.velocity}});
    }
    json violations = json::array();
    for (const auto& v : r.violations)
    {
        violations.push_back({{"x", v.position}, {"v", v.velocity}, {"modulus", v.modulus}});
    }
    return {{"passed", r.passed()},
            {"interpolation_ok", r.interpolation_ok},
            {"bounded_ok", r.bounded_ok},
            {"strict_ok", r.strict_ok},
            {"max_interpolation_error", r.max_interpolation_error},
            {"max_modulus", r.max_modulus},
            {"max_modulus_outside", r.max_modulus_outside},
            {"grid_points", r.grid_points},
            {"ghosts", ghosts},
            {"violations", violations}};
}

json to_json(const StabilityReport& r)
{
    return {{"relation_ok", r.relation_ok},
            {"separation_ok", r.separation_ok},
            {"ghost_condition_ok", r.ghost_condition_ok},
            {"margin_bound", r.margin_bound},
            {"min_ghost_sum", r.min_ghost_sum},
            {"srf_x", r.srf_x}};
}

// --- solver and experiments ---------------------------------------------------------------

namespace {

SolverConfig solver_from(const Node& n, SolverConfig c)
{
    n.require_object();
    n.optional("tv_bound", c.tv_bound);
    n.optional("max_spikes", c.max_spikes);
    n.optional("max_outer_iterations", c.max_outer_iterations);
    n.optional("refine_steps", c.refine_steps);
    n.optional("refine_tolerance", c.refine_tolerance);
    n.optional("residual_tolerance", c.residual_tolerance);
    n.optional("prune_threshold", c.prune_threshold);
    n.optional("merge_distance", c.merge_distance);
    if (n.has("candidate_grid"))
    {
        const Node g = n.field("candidate_grid");
        g.optional("n_x", c.candidate_grid.n_x);
        g.optional("n_v", c.candidate_grid.n_v);
        g.optional("velocity_bound", c.candidate_grid.velocity_bound);
        if (c.candidate_grid.n_x < 1 || c.candidate_grid.n_v < 1)
        {
            g.fail("n_x and n_v must be >= 1");
        }
    }
    if (n.has("refine_method"))
    {
        const Node m        = n.field("refine_method");
        const std::string s = m.string();
        if (s == "gradient")
        {
            c.refine_method = RefineMethod::gradient;
        }
        else if (s == "levenberg_marquardt")
        {
            c.refine_method = RefineMethod::levenberg_marquardt;
        }
        else
        {
            m.fail("refine_method must be \"gradient\" or \"levenberg_marquardt\"");
        }
    }
    if (!(c.tv_bound > 0.0))
    {
        n.fail("tv_bound must be positive");
    }
    if (c.max_spikes < 1 || c.max_outer_iterations < 1 || c.refine_steps < 0)
    {
        n.fail("max_spikes and max_outer_iterations must be >= 1, refine_steps >= 0");
    }
    if (c.refine_tolerance < 0.0 || c.residual_tolerance < 0.0 || c.prune_threshold < 0.0 ||
        c.merge_distance < 0.0)
    {
        n.fail("tolerances and thresholds must be >= 0");
    }
    return c;
}

} // namespace

SolverConfig solver_config_from_json(const json& j, SolverConfig base)
{
    return solver_from(Node(j, ""), base);
}

json to_json(const SolverConfig& c)
{
    return {{"tv_bound", c.tv_bound},
            {"max_spikes", c.max_spikes},
            {"max_outer_iterations", c.max_outer_iterations},
            {"candidate_grid",
             {{"n_x", c.candidate_grid.n_x},
              {"n_v", c.candidate_grid.n_v},
              {"velocity_bound", c.candidate_grid.velocity_bound}}},
            {"refine_steps", c.refine_steps},
            {"refine_tolerance", c.refine_tolerance},
            {"residual_tolerance", c.residual_tolerance},
            {"prune_threshold", c.prune_threshold},
            {"merge_distance", c.merge_distance},
            {"refine_method", c.refine_method == RefineMethod::gradient ? "gradient"
                                                                         : "levenberg_marquardt"}};
}

TrialSpec trial_spec_from_json(const json& j, TrialSpec s)
{
    const Node n(j, "");
    n.require_object();
    n.optional("f_c", s.cutoff);
    n.optional("K", s.K);
    n.optional("tau", s.tau);
    n.optional("n_min", s.n_min);
    n.optional("n_max", s.n_max);
    n.optional("w_min", s.w_min);
    n.optional("w_max", s.w_max);
    if (n.has("srf"))
    {
        s.srf_x = s.srf_v = n.field("srf").number();
    }
    n.optional("srf_x", s.srf_x);
    n.optional("srf_v", s.srf_v);
    n.optional("delta_w", s.delta_w);
    n.optional("alpha", s.alpha);
    n.optional("beta", s.beta);
    n.optional("seed", s.seed);
    n.optional("min_dynamic_separation", s.min_dynamic_separation);
    n.optional("run_static", s.run_static);
    if (n.has("solver"))
    {
        s.solver = solver_from(n.field("solver"), s.solver);
    }
    auto check = [&](const char* key, bool ok, const char* message) {
        if (!ok)
        {
            (n.has(key) ? n.field(key) : n).fail(message);
        }
    };
    check("f_c", s.cutoff >= 1, "f_c must be >= 1");
    check("K", s.K >= 1, "K must be >= 1");
    check("tau", s.tau > 0.0, "tau must be positive");
    check("n_min", s.n_min >= 1, "n_min must be >= 1");
    check("n_max", s.n_max >= s.n_min, "n_max must be >= n_min");
    check("w_min", s.w_min > 0.0, "w_min must be positive");
    check("w_max", s.w_max >= s.w_min, "w_max must be >= w_min");
    check("srf_x", s.srf_x > 0.0, "srf_x must be positive");
    check("srf_v", s.srf_v > 0.0, "srf_v must be positive");
    check("delta_w", s.delta_w > 0.0, "delta_w must be positive");
    check("alpha", s.alpha >= 0.0, "alpha must be >= 0");
    guarded(n, [&] {
        s.validate();
        return 0;
    });
    return s;
}

json to_json(const TrialSpec& s)
{
    return {{"f_c", s.cutoff},
            {"K", s.K},
            {"tau", s.tau},
            {"n_min", s.n_min},
            {"n_max", s.n_max},
            {"w_min", s.w_min},
            {"w_max", s.w_max},
            {"srf_x", s.srf_x},
            {"srf_v", s.srf_v},
            {"delta_w", s.delta_w},
            {"alpha", s.alpha},
            {"beta", s.beta},
            {"seed", s.seed},
            {"min_dynamic_separation", s.min_dynamic_separation},
            {"run_static", s.run_static},
            {"solver", to_json(s.solver)}};
}

BinSpec bin_spec_from_json(const json& j, BinSpec b)
{
    const Node n(j, "");
    n.require_object();
    n.optional("count", b.count);
    n.optional("lo", b.lo);
    n.optional("hi", b.hi);
    if (b.count < 1 || !(b.hi > b.lo))
    {
        n.fail("bins need count >= 1 and hi > lo");
    }
    return b;
}

std::string records_csv(std::span<const ExperimentRecord> records)
{
    std::ostringstream os;
    os << std::setprecision(10);
    os << "trial_id,n,dynamic_separation,dynamic_ok,static_any,static_3,static_successes,"
          "error\n";
    for (const auto& r : records)
    {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << r.trial_id << ',' << r.config.size() << ',' << r.dynamic_separation << ','
           << r.dynamic_ok << ',' << r.static_any << ',' << r.static_3 << ','
           << r.static_successes << ',' << err << '\n';
    }
    return os.str();
}

// --- ultrasound ---------------------------------------------------------------------------

VesselPhantom phantom_from_json(const json& j)
{
    const Node n(j, "");
    VesselPhantom p;
    p.vessels.clear();
    if (n.has("field"))
    {
        const Node f = n.field("field");
        f.optional("width", p.pixels.width);
        f.optional("height", p.pixels.height);
        f.optional("pitch_mm", p.pixels.pitch);
    }
    n.optional("sigma", p.sigma);
    const Node vs = n.field("vessels");
    for (std::size_t i = 0; i < vs.size(); ++i)
    {
        const Node v = vs[i];
        const Node c = v.field("control");
        if (c.size() != 4)
        {
            c.fail("expected four control points");
        }
        Vessel ves;
        for (std::size_t k = 0; k < 4; ++k)
        {
            const Vector pt = c[k].vector();
            if (pt.size() != 2)
            {
                c[k].fail("expected [x, y]");
            }
            ves.control[k] = Point2(pt[0], pt[1]);
        }
        v.optional("speed", ves.speed);
        v.optional("flow", ves.flow);
        v.optional("parent", ves.parent);
        p.vessels.push_back(ves);
    }
    guarded(n, [&] {
        p.validate();
        return 0;
    });
    return p;
}

json to_json(const VesselPhantom& p)
{
    json vessels = json::array();
    for (const auto& v : p.vessels)
    {
        json control = json::array();
        for (const auto& c : v.control)
        {
            control.push_back({c.x(), c.y()});
        }
        vessels.push_back(
            {{"control", control}, {"speed", v.speed}, {"flow", v.flow}, {"parent", v.parent}});
    }
    return {{"field",
             {{"width", p.pixels.width}, {"height", p.pixels.height}, {"pitch_mm", p.pixels.pitch}}},
            {"sigma", p.sigma},
            {"vessels", vessels}};
}

BubbleProcess bubble_process_from_json(const json& j, BubbleProcess b)
{
    const Node n(j, "");
    n.require_object();
    n.optional("activation", b.activation);
    n.optional("mean_lifetime", b.mean_lifetime);
    n.optional("seed", b.seed);
    guarded(n, [&] {
        b.validate();
        return 0;
    });
    return b;
}

AcquisitionSpec acquisition_from_json(const json& j, AcquisitionSpec a)
{
    const Node n(j, "");
    n.require_object();
    n.optional("tau", a.tau);
    n.optional("duration", a.duration);
    n.optional("alpha", a.alpha);
    guarded(n, [&] {
        a.validate();
        return 0;
    });
    return a;
}

PipelineSettings pipeline_from_json(const json& j, PipelineSettings s)
{
    const Node n(j, "");
    n.require_object();
    n.optional("K", s.K);
    n.optional("rel_tol", s.rel_tol);
    n.optional("alpha", s.alpha);
    n.optional("min_bubbles", s.min_bubbles);
    if (n.has("solver"))
    {
        s.solver = solver_from(n.field("solver"), s.solver);
    }
    if (s.K < 1 || !(s.rel_tol >= 0.0) || !(s.alpha >= 0.0) || !(s.min_bubbles >= 0.0))
    {
        n.fail("pipeline needs K >= 1 and nonnegative rel_tol, alpha, min_bubbles");
    }
    return s;
}

std::string points_csv(std::span<const MapPoint> points)
{
    std::ostringstream os;
    os << std::setprecision(10);
    os << "x_mm,y_mm,vx_mm_s,vy_mm_s,window_id\n";
    for (const auto& p : points)
    {
        os << p.x << ',' << p.y << ',' << p.vx << ',' << p.vy << ',' << p.window_id << '\n';
    }
    return os.str();
}

std::string pgm(const Eigen::MatrixXd& image)
{
    std::ostringstream os;
    os << "P2\n" << image.cols() << ' ' << image.rows() << "\n255\n";
    const double lo = image.size() ? image.minCoeff() : 0.0;
    const double hi = image.size() ? image.maxCoeff() : 0.0;
    for (Eigen::Index r = 0; r < image.rows(); ++r)
    {
        for (Eigen::Index c = 0; c < image.cols(); ++c)
        {
            const double t = hi > lo ? (image(r, c) - lo) / (hi - lo) : 0.0;
            os << static_cast<int>(std::lround(255.0 * t)) << (c + 1 < image.cols() ? ' ' : '\n');
        }
    }
    return os.str();
}

json image_to_json(const Eigen::MatrixXd& image, const PixelGrid& pixels)
{
    std::vector<double> flat;
    for (Eigen::Index r = 0; r < image.rows(); ++r)
    {
        for (Eigen::Index c = 0; c < image.cols(); ++c)
        {
            flat.push_back(image(r, c));
        }
    }
    return {{"width", pixels.width},
            {"height", pixels.height},
            {"pitch_mm", pixels.pitch},
            {"pixels", flat}};
}

// --- files ------------------------------------------------------------------------------

void write_text(const std::filesystem::path& path, std::string_view text)
{
    if (path.has_parent_path())
    {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out)
    {
        throw Error("cannot write " + path.string());
    }
}

void write_json(const std::filesystem::path& path, const json& j)
{
    write_text(path, j.dump(2) + "\n");
}

} // namespace dynspike::io
