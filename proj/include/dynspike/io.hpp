#pragma once

#include <dynspike/certificates.hpp>
#include <dynspike/experiments.hpp>
#include <dynspike/forward_model.hpp>
#include <dynspike/solver.hpp>
#include <dynspike/ultrasound.hpp>

#include <json.hpp>

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>

namespace dynspike::io {

using json = nlohmann::json;

/// Malformed or invalid input; line and column are 1-based, 0 when unknown.
class ParseError : public InvalidArgument
{
public:
    ParseError(std::string source, int line, int column, std::string pointer,
               const std::string& message);

    const std::string& source() const noexcept { return m_source; }
    int line() const noexcept { return m_line; }
    int column() const noexcept { return m_column; }
    /// JSON pointer of the offending value, empty for syntax errors.
    const std::string& pointer() const noexcept { return m_pointer; }

private:
    std::string m_source;
    int m_line;
    int m_column;
    std::string m_pointer;
};

/// A field of a JSON value failed validation. Carries the JSON pointer only;
/// Document::read turns it into a located ParseError.
class FieldError : public InvalidArgument
{
public:
    FieldError(std::string pointer, const std::string& message);
    const std::string& pointer() const noexcept { return m_pointer; }

private:
    std::string m_pointer;
};

///
/// Parsed JSON text plus the line and column of every value, so that
/// validation failures can point into the source.
///
class Document
{
public:
    static Document parse(std::string_view text, std::string source = "<input>");
    static Document load(const std::filesystem::path& path);

    const json& value() const noexcept { return m_value; }
    const std::string& source() const noexcept { return m_source; }

    struct Position
    {
        int line   = 0;
        int column = 0;
    };
    /// Position of the value at `pointer`, or of its closest located parent.
    Position locate(const std::string& pointer) const;

    /// Calls decode(value()) and converts FieldError into ParseError.
    template <typename Decode>
    auto read(Decode&& decode) const -> decltype(decode(std::declval<const json&>()))
    {
        try
        {
            return decode(m_value);
        }
        catch (const FieldError& e)
        {
            const Position p = locate(e.pointer());
            throw ParseError(m_source, p.line, p.column, e.pointer(), e.what());
        }
    }

    /// read() applied to the value at `pointer` (an empty object when absent),
    /// with error pointers reported relative to the document root.
    template <typename Decode>
    auto read_at(const std::string& pointer, Decode&& decode) const
        -> decltype(decode(std::declval<const json&>()))
    {
        static const json empty = json::object();
        const json::json_pointer ptr(pointer);
        const json& sub = m_value.contains(ptr) ? m_value.at(ptr) : empty;
        try
        {
            return decode(sub);
        }
        catch (const FieldError& e)
        {
            const std::string full = pointer + e.pointer();
            const Position p       = locate(full);
            throw ParseError(m_source, p.line, p.column, full, e.what());
        }
    }

private:
    json m_value;
    std::string m_source;
    std::map<std::string, Position> m_positions;
};

// --- phase space and measurements -------------------------------------------------

json to_json(const Configuration& cfg);
Configuration configuration_from_json(const json& j);

/// The configuration format plus residual_norm, iterations and converged.
json to_json(const Reconstruction& r, const TimeGrid& grid);
Reconstruction reconstruction_from_json(const json& j);

json to_json(const StaticReconstruction& r, int frame);

/// {"f_c", "K", "tau", "data": [[re, im], ...]} with k-outer, l-inner data.
json to_json(const MeasurementTensor& y);
MeasurementTensor measurements_from_json(const json& j);

/// {"width", "height", "pitch_mm", "sigma", "K", "tau", "frames": [[...], ...]}
/// with row-major pixels.
json to_json(const FrameStack& s);
FrameStack frames_from_json(const json& j);

// --- certificates ------------------------------------------------------------------

/// {"K_set", "f_c", "frames": [{"k", "c": [[re, im]], "nodes", "gamma": [[re, im]]}]}
json to_json(const DynamicalCertificate& cert);
json to_json(const VerificationReport& r);
json to_json(const StabilityReport& r);

// --- solver and experiments --------------------------------------------------------

/// Missing fields keep their defaults.
SolverConfig solver_config_from_json(const json& j, SolverConfig base = {});
json to_json(const SolverConfig& c);

TrialSpec trial_spec_from_json(const json& j, TrialSpec base = {});
json to_json(const TrialSpec& s);

BinSpec bin_spec_from_json(const json& j, BinSpec base = {});

/// One row per trial; timings are left out so reruns are byte-identical.
std::string records_csv(std::span<const ExperimentRecord> records);

// --- ultrasound --------------------------------------------------------------------

/// {"field": {"width", "height", "pitch_mm"}, "sigma",
///  "vessels": [{"control": [[x, y] x 4], "speed", "flow", "parent"}]}
VesselPhantom phantom_from_json(const json& j);
json to_json(const VesselPhantom& p);

BubbleProcess bubble_process_from_json(const json& j, BubbleProcess base = {});
AcquisitionSpec acquisition_from_json(const json& j, AcquisitionSpec base = {});
PipelineSettings pipeline_from_json(const json& j, PipelineSettings base = {});

/// Columns x_mm, y_mm, vx_mm_s, vy_mm_s, window_id.
std::string points_csv(std::span<const MapPoint> points);

/// Plain (P2) graymap scaled to 0..255.
std::string pgm(const Eigen::MatrixXd& image);
json image_to_json(const Eigen::MatrixXd& image, const PixelGrid& pixels);

// --- files ---------------------------------------------------------------------------

void write_text(const std::filesystem::path& path, std::string_view text);
void write_json(const std::filesystem::path& path, const json& j);

} // namespace dynspike::io
