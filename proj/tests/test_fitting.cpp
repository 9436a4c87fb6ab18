#include "qrtls/fitting.hpp"
#include "qrtls/params_io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

using namespace qrtls;

namespace {

double lorentzian(double f, double f0, double fwhm) {
    const double h = 0.5 * fwhm;
    return h * h / ((f - f0) * (f - f0) + h * h);
}

// 5 MHz bins from 6.0 to 7.0 GHz
SpectroscopyGrid lorentz_grid(const std::vector<std::vector<std::pair<double, double>>>& rows, double fwhm_ghz) {
    SpectroscopyGrid g;
    g.freq = linspace(6.0, 7.0, 201);
    g.values = Eigen::MatrixXd::Zero(static_cast<Index>(rows.size()), 201);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        g.sweep.push_back(static_cast<double>(r));
        for (Index c = 0; c < 201; ++c) {
            for (auto [f0, a] : rows[r]) g.values(static_cast<Index>(r), c) += a * lorentzian(g.freq[c], f0, fwhm_ghz);
        }
    }
    return g;
}

constexpr double kBin = 0.005;

SystemParams reduced() {
    SystemParams p = reference_params();
    p.qubit.n_levels = 3;
    p.resonator.n_levels = 3;
    return p;
}

}  // namespace

TEST(Peaks, SingleLorentzianCentreAndWidth) {
    std::vector<std::vector<std::pair<double, double>>> rows;
    for (int r = 0; r < 9; ++r) rows.push_back({{6.4 + 0.0123 * r + 0.00071 * r * r, 1.0 + 0.1 * r}});
    const auto g = lorentz_grid(rows, 0.030);
    const auto peaks = extract_peaks(g);
    ASSERT_EQ(peaks.size(), rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        EXPECT_EQ(peaks[r].sweep_value, static_cast<double>(r));
        EXPECT_NEAR(peaks[r].freq_ghz, rows[r][0].first, 0.05 * kBin);
        EXPECT_NEAR(peaks[r].fwhm_mhz, 30.0, 0.05 * 30.0);
    }
}

TEST(Peaks, TwoSeparatedLinesAreBothFound) {
    const auto g = lorentz_grid({{{6.40, 1.0}, {6.46, 0.7}}}, 0.030);  // separation 2 FWHM
    const auto peaks = extract_peaks(g);
    ASSERT_EQ(peaks.size(), 2u);
    EXPECT_NEAR(peaks[0].freq_ghz, 6.40, 0.3 * kBin);
    EXPECT_NEAR(peaks[1].freq_ghz, 6.46, 0.3 * kBin);
    EXPECT_GT(peaks[0].amplitude, peaks[1].amplitude);
}

TEST(Peaks, FlatGridHasNoPeaks) {
    SpectroscopyGrid g;
    g.sweep = {0.0, 1.0};
    g.freq = linspace(6.0, 7.0, 50);
    g.values = Eigen::MatrixXd::Constant(2, 50, 0.3);
    EXPECT_TRUE(extract_peaks(g).empty());
}

TEST(Peaks, InvariantUnderPositiveRescaling) {
    auto g = lorentz_grid({{{6.3, 1.0}, {6.71, 0.4}}, {{6.52, 1.0}}}, 0.025);
    const auto a = extract_peaks(g, {.rel_prominence = 0.2, .smoothing_width = 3});
    g.values *= 7.3;
    const auto b = extract_peaks(g, {.rel_prominence = 0.2, .smoothing_width = 3});
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a[i].freq_ghz, b[i].freq_ghz, 1e-12);
        EXPECT_NEAR(a[i].fwhm_mhz, b[i].fwhm_mhz, 1e-9);
        EXPECT_NEAR(b[i].amplitude, 7.3 * a[i].amplitude, 1e-9);
    }
}

TEST(Peaks, NanCellsAndRowsAreSkipped) {
    auto g = lorentz_grid({{{6.3, 1.0}, {6.7, 1.0}}, {{6.5, 1.0}}}, 0.030);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    g.values.row(1).setConstant(nan);
    for (Index c = 55; c < 70; ++c) g.values(0, c) = nan;  // hole over the 6.3 GHz line
    const auto peaks = extract_peaks(g);
    ASSERT_EQ(peaks.size(), 1u);
    EXPECT_NEAR(peaks[0].freq_ghz, 6.7, 0.05 * kBin);
}

TEST(Peaks, CsvRoundTrip) {
    std::vector<PeakObservation> peaks(2);
    peaks[0] = {55.1, 6.6251234567891, 0.5, 3.25, 2, 1.5};
    peaks[1] = {55.2, 6.7, 1.0, 1.0, std::nullopt, 1.0};
    std::stringstream ss;
    write_peaks_csv(ss, peaks, {{"source", "test"}});
    Metadata md;
    const auto back = read_peaks_csv(ss, &md);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].freq_ghz, peaks[0].freq_ghz);
    EXPECT_EQ(back[0].n_photons, 2);
    EXPECT_FALSE(back[1].n_photons.has_value());
    EXPECT_EQ(back[0].weight, 1.5);
    EXPECT_EQ(metadata_value(md, "source"), "test");
    std::stringstream bad("sweep_value,freq_GHz\n1,2\n");
    EXPECT_THROW(read_peaks_csv(bad), std::runtime_error);
}

TEST(Residuals, ZeroAtTruthAndShiftedObservation) {
    const SystemParams p = reduced();
    CatalogOptions o;
    o.max_photons = 1;
    o.f_min_ghz = 5.7;
    o.f_max_ghz = 7.5;
    FitProblem pb;
    pb.fixed = p;
    pb.max_photons = 1;
    pb.observations = synthesize_peaks(p, SweepKind::Piezo, linspace(30.0, 60.0, 7), o, 1e-3);
    ASSERT_FALSE(pb.observations.empty());
    auto r = model_residuals(pb, p);
    EXPECT_LT(r.mhz.cwiseAbs().maxCoeff(), 1e-9);

    pb.observations[3].freq_ghz += 0.002;
    r = model_residuals(pb, p);
    EXPECT_NEAR(r.mhz(3), 2.0, 1e-9);

    // nothing with that photon number anywhere near
    pb.max_photons = 3;
    pb.observations = {{40.0, 2.0, 1.0, 1.0, 3, 1.0}};
    r = model_residuals(pb, p);
    EXPECT_TRUE(r.unmatched[0]);
    EXPECT_EQ(r.mhz(0), unmatched_residual_mhz);
}

TEST(Problem, ValidationNamesTheProblem) {
    FitProblem pb;
    pb.fixed = reduced();
    pb.observations = {{40.0, 6.5, 1.0, 1.0, std::nullopt, 1.0}};
    auto message = [&] {
        try {
            pb.validate();
        } catch (const std::exception& e) {
            return std::string(e.what());
        }
        return std::string{};
    };
    pb.free_params = {{"no_such_key", 0.0, 1.0}};
    EXPECT_NE(message().find("no_such_key"), std::string::npos);
    EXPECT_THROW(pb.validate(), ConfigError);
    pb.free_params = {{"g_x", 30.0, 10.0}};
    EXPECT_NE(message().find("g_x"), std::string::npos);
    pb.free_params = {{"g_x", 10.0, 30.0}, {"g_x", 10.0, 30.0}};
    EXPECT_NE(message().find("duplicate"), std::string::npos);
    pb.free_params = {{"g_x", 10.0, 30.0}};
    pb.observations[0].n_photons = 5;
    EXPECT_FALSE(message().empty());
    pb.observations[0].n_photons = 1;
    EXPECT_NO_THROW(pb.validate());
}

TEST(Fit, SingleParameterResonatorLine) {
    SystemParams p = reduced();
    p.tls.g_x = 0.0;
    CatalogOptions o;
    o.max_photons = 1;
    o.f_min_ghz = 6.5;
    o.f_max_ghz = 6.7;
    FitProblem pb;
    pb.fixed = p;
    pb.max_photons = 1;
    pb.observations = synthesize_peaks(p, SweepKind::Piezo, linspace(20.0, 30.0, 5), o, 1e-6);
    ASSERT_EQ(pb.observations.size(), 5u);
    pb.free_params = {{"f_res", 6.55, 6.70}};
    SystemParams seed = p;
    seed.resonator.f_res = 6.60;
    const auto r = fit(pb, seed);
    EXPECT_TRUE(r.converged) << r.message;
    EXPECT_NEAR(r.best.resonator.f_res, p.resonator.f_res, 1e-7);
    EXPECT_LT(r.residual_rms_mhz, 1e-3);
}

TEST(Fit, TraceRmsAndUncertainties) {
    const SystemParams p = reduced();
    CatalogOptions o;
    o.max_photons = 1;
    o.f_min_ghz = 5.7;
    o.f_max_ghz = 7.5;
    FitProblem pb;
    pb.fixed = p;
    pb.max_photons = 1;
    pb.observations = synthesize_peaks(p, SweepKind::Piezo, linspace(15.0, 65.0, 11), o, 1e-3);
    // small deterministic scatter so the curvature estimate is non-degenerate
    for (std::size_t i = 0; i < pb.observations.size(); ++i) {
        pb.observations[i].freq_ghz += 1e-4 * std::sin(1.7 * static_cast<double>(i));
    }
    pb.free_params = {{"delta0", 5.5, 6.2}, {"gamma", 180.0, 240.0}};
    SystemParams seed = p;
    seed.tls.delta0 = 5.95;
    seed.tls.gamma = 200.0;
    const auto r = fit(pb, seed);
    ASSERT_FALSE(r.trace.empty());
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i], r.trace[i - 1]);
    const double wsum = r.residuals.weights.sum();
    EXPECT_NEAR(r.residual_rms_mhz * r.residual_rms_mhz * wsum, r.loss, 1e-9 * r.loss);
    EXPECT_NEAR(r.residuals.loss(), r.loss, 1e-9 * r.loss);
    for (Index k = 0; k < r.sigma.size(); ++k) {
        EXPECT_TRUE(std::isfinite(r.sigma(k)));
        EXPECT_GT(r.sigma(k), 0.0);
    }
    EXPECT_NEAR(r.best.tls.delta0, p.tls.delta0, 5 * r.sigma(0) + 1e-6);
}

TEST(Fit, IterationCapReturnsBestSoFar) {
    const SystemParams p = reduced();
    CatalogOptions o;
    o.max_photons = 1;
    o.f_min_ghz = 5.7;
    o.f_max_ghz = 7.5;
    FitProblem pb;
    pb.fixed = p;
    pb.max_photons = 1;
    pb.observations = synthesize_peaks(p, SweepKind::Piezo, linspace(15.0, 65.0, 11), o, 1e-3);
    pb.free_params = {{"delta0", 5.5, 6.2}, {"V0", 35.0, 45.0}};
    SystemParams seed = p;
    seed.tls.delta0 = 6.0;
    seed.tls.V0 = 42.0;
    FitStrategy st;
    st.simplex_max_iter = 2;
    st.lm_max_iter = 0;
    const auto r = fit(pb, seed, st);
    EXPECT_FALSE(r.converged);
    EXPECT_FALSE(r.message.empty());
    EXPECT_LE(r.loss, model_residuals(pb, seed).loss());
}

TEST(Fit, DeterministicMultiStart) {
    const SystemParams p = reduced();
    CatalogOptions o;
    o.max_photons = 1;
    o.f_min_ghz = 5.7;
    o.f_max_ghz = 7.5;
    FitProblem pb;
    pb.fixed = p;
    pb.max_photons = 1;
    pb.observations = synthesize_peaks(p, SweepKind::Piezo, linspace(15.0, 65.0, 9), o, 1e-3);
    pb.free_params = {{"gamma", 180.0, 240.0}, {"V0", 35.0, 45.0}};
    FitStrategy st;
    st.starts = 3;
    st.simplex_max_iter = 60;
    st.lm_max_iter = 5;
    SystemParams seed = p;
    seed.tls.gamma = 190.0;
    const auto a = fit(pb, seed, st);
    st.workers = 2;
    const auto b = fit(pb, seed, st);
    ASSERT_EQ(a.x.size(), b.x.size());
    for (Index k = 0; k < a.x.size(); ++k) EXPECT_EQ(a.x(k), b.x(k));
    EXPECT_EQ(a.loss, b.loss);
}

TEST(Fit, TlsRoundTripFromPerturbedSeeds) {
    const SystemParams p = reduced();
    CatalogOptions o;
    o.max_photons = 1;
    o.f_min_ghz = 5.7;
    o.f_max_ghz = 7.5;
    FitProblem pb;
    pb.fixed = p;
    pb.max_photons = 1;
    pb.observations = synthesize_peaks(p, SweepKind::Piezo, linspace(15.0, 65.0, 26), o, 1e-3);
    pb.free_params = {{"delta0", 0.75 * 5.838, 1.25 * 5.838},
                      {"gamma", 0.75 * 212.0, 1.25 * 212.0},
                      {"V0", 0.75 * 40.2, 1.25 * 40.2},
                      {"g_x", 0.75 * 21.7, 1.25 * 21.7}};
    for (double s : {1.0, -1.0}) {
        SystemParams seed = p;
        seed.tls.delta0 *= 1 + 0.1 * s;
        seed.tls.gamma *= 1 - 0.1 * s;
        seed.tls.V0 *= 1 + 0.1 * s;
        seed.tls.g_x *= 1 - 0.1 * s;
        const auto r = fit(pb, seed);
        EXPECT_NEAR(r.best.tls.delta0, p.tls.delta0, 0.02 * p.tls.delta0);
        EXPECT_NEAR(r.best.tls.gamma, p.tls.gamma, 0.02 * p.tls.gamma);
        EXPECT_NEAR(r.best.tls.V0, p.tls.V0, 0.02 * p.tls.V0);
        EXPECT_NEAR(r.best.tls.g_x, p.tls.g_x, 0.02 * p.tls.g_x);
    }
}

TEST(Fit, ReportFilesAreWritten) {
    SystemParams p = reduced();
    p.tls.g_x = 0.0;
    CatalogOptions o;
    o.max_photons = 1;
    o.f_min_ghz = 6.5;
    o.f_max_ghz = 6.7;
    FitProblem pb;
    pb.fixed = p;
    pb.max_photons = 1;
    pb.observations = synthesize_peaks(p, SweepKind::Piezo, linspace(20.0, 30.0, 3), o, 1e-6);
    pb.free_params = {{"f_res", 6.55, 6.70}};
    const auto r = fit(pb, p);
    const auto dir = std::filesystem::temp_directory_path() / "qrtls_fit_report_test";
    std::filesystem::create_directories(dir);
    write_fit_report(dir / "fit", pb, r);
    EXPECT_TRUE(std::filesystem::exists(dir / "fit.txt"));
    EXPECT_TRUE(std::filesystem::exists(dir / "fit_residuals.csv"));
    EXPECT_TRUE(std::filesystem::exists(dir / "fit.params"));
    std::filesystem::remove_all(dir);
}

TEST(Gz, LargeCouplingIsDetected) {
    GzExperiment e;
    e.g_z_mhz = 6.0;
    e.realizations = 3;
    const auto d = gz_detection_experiment(reduced(), e);
    ASSERT_EQ(d.runs.size(), 3u);
    EXPECT_EQ(d.detection_fraction, 1.0);
    for (const auto& r : d.runs) EXPECT_NEAR(r.g_z_mhz, 6.0, 4 * r.sigma_mhz);
    e.realizations = 0;
    EXPECT_THROW(gz_detection_experiment(reduced(), e), std::invalid_argument);
}

TEST(Geff, CrossResonanceLaw) {
    std::vector<SystemParams> sets;
    for (double delta : {300.0, 400.0, 500.0, 600.0}) {
        SystemParams p = reference_params();
        p.qubit.f_q = p.resonator.f_res + 1e-3 * delta;
        sets.push_back(p);
    }
    const auto rows = geff_vs_detuning(sets);
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) {
        EXPECT_GE(r.geff_mhz / r.analytic_mhz, 0.9) << r.detuning_mhz;
        EXPECT_LE(r.geff_mhz / r.analytic_mhz, 1.1) << r.detuning_mhz;
    }
    EXPECT_GE(rows[2].geff_mhz, 1.4);
    EXPECT_NEAR(rows[3].geff_mhz / rows[0].geff_mhz, 0.5, 0.05);
    EXPECT_THROW(geff_vs_detuning({sets[0]}), std::invalid_argument);
}
