#include "neurodec/synth.hpp"

#include "neurodec/model.hpp"  // default_sensor_grid
#include "neurodec/scaling.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace neurodec::synth {

using nlohmann::json;

void SynthConfig::validate() const {
    if (channels < 1 || timepoints < 1 || embed_dim < 1 || n_images < 1 || n_reps < 1 ||
        n_subjects < 1) {
        throw std::invalid_argument("SynthConfig: all counts must be >= 1");
    }
    if (!(snr > 0.0)) throw std::invalid_argument("SynthConfig: snr must be > 0");
}

std::string SynthConfig::to_json() const {
    json j;
    j["device"] = device_name(device);
    j["channels"] = channels;
    j["timepoints"] = timepoints;
    j["embed_dim"] = embed_dim;
    j["n_images"] = n_images;
    j["n_reps"] = n_reps;
    j["n_subjects"] = n_subjects;
    j["snr"] = snr;
    j["seed"] = seed;
    return j.dump(2);
}

SynthConfig SynthConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    SynthConfig c;
    c.device = parse_device(j.at("device").get<std::string>());
    c.channels = j.at("channels").get<int>();
    c.timepoints = j.at("timepoints").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.n_images = j.at("n_images").get<int>();
    c.n_reps = j.at("n_reps").get<int>();
    c.n_subjects = j.at("n_subjects").get<int>();
    c.snr = j.at("snr").get<double>();
    c.seed = j.value("seed", std::uint64_t{0});
    c.validate();
    return c;
}

double response_kernel(DeviceKind device, double t) {
    if (t <= 0.0) return 0.0;
    if (is_fmri(device)) {
        // gamma-shaped bump, unit peak at t = 5 s
        return std::pow(t / 5.0, 5.0) * std::exp(5.0 - t);
    }
    // causal biphasic oscillation, unit peak near 43 ms
    constexpr double f = 5.0;
    constexpr double tau = 0.15;
    static const double t_peak =
        std::atan(2.0 * std::numbers::pi * f * tau) / (2.0 * std::numbers::pi * f);
    static const double peak =
        std::sin(2.0 * std::numbers::pi * f * t_peak) * std::exp(-t_peak / tau);
    return std::sin(2.0 * std::numbers::pi * f * t) * std::exp(-t / tau) / peak;
}

DatasetSpec desk_dataset_spec(DeviceKind device) {
    DatasetSpec s;
    s.device = device;
    s.hourly_cost_usd = scaling::CostTable::defaults().rate(device);
    switch (device) {
        case DeviceKind::EEG:
            s.name = "synth-eeg";
            s.channels = 32;
            s.sampling_rate_hz = 40.0;
            s.soa_seconds = 0.2;
            s.epoch_start_s = -0.2;
            s.epoch_end_s = 1.0;
            break;
        case DeviceKind::MEG:
            s.name = "synth-meg";
            s.channels = 48;
            s.sampling_rate_hz = 40.0;
            s.soa_seconds = 1.6;
            s.epoch_start_s = -0.5;
            s.epoch_end_s = 1.0;
            break;
        case DeviceKind::FMRI3T:
            s.name = "synth-fmri3t";
            s.channels = 48;
            s.tr_seconds = 1.5;
            s.soa_seconds = 4.5;
            s.epoch_start_s = 3.0;
            s.epoch_end_s = 10.5;
            break;
        case DeviceKind::FMRI7T:
            s.name = "synth-fmri7t";
            s.channels = 64;
            s.tr_seconds = 1.6;
            s.soa_seconds = 4.0;
            s.epoch_start_s = 3.0;
            s.epoch_end_s = 11.0;
            break;
    }
    return s;
}

std::map<DeviceKind, SynthConfig> device_presets() {
    std::map<DeviceKind, SynthConfig> presets;
    for (DeviceKind dev :
         {DeviceKind::EEG, DeviceKind::MEG, DeviceKind::FMRI3T, DeviceKind::FMRI7T}) {
        const DatasetSpec spec = desk_dataset_spec(dev);
        SynthConfig c;
        c.device = dev;
        c.channels = spec.channels;
        if (is_fmri(dev)) {
            c.timepoints = static_cast<int>(
                std::floor((spec.epoch_end_s - spec.epoch_start_s) / spec.tr_seconds + 1e-9));
        } else {
            c.timepoints = static_cast<int>(
                std::lround((spec.epoch_end_s - spec.epoch_start_s) * spec.sampling_rate_hz));
        }
        c.embed_dim = 16;
        c.n_images = 160;
        c.n_reps = 4;
        c.n_subjects = 2;
        switch (dev) {
            case DeviceKind::EEG: c.snr = 0.08; break;
            case DeviceKind::MEG: c.snr = 0.10; break;
            case DeviceKind::FMRI3T: c.snr = 0.50; break;
            case DeviceKind::FMRI7T: c.snr = 1.20; break;
        }
        presets[dev] = c;
    }
    return presets;
}

namespace {

constexpr int kImagesPerCategory = 4;
constexpr double kHighGainFactor = 1.8;
constexpr double kHighGainBandY = 0.75;  // sensors with y >= this get extra gain

Vector sampled_kernel(const SynthConfig& config, const DatasetSpec& spec) {
    Vector k(config.timepoints);
    for (int t = 0; t < config.timepoints; ++t) {
        double time;
        if (is_fmri(config.device)) {
            time = spec.epoch_start_s + static_cast<double>(t) * spec.tr_seconds;
        } else {
            time = spec.epoch_start_s + static_cast<double>(t) / spec.sampling_rate_hz;
        }
        k(t) = response_kernel(config.device, time);
    }
    const double peak = k.cwiseAbs().maxCoeff();
    if (peak <= 0.0) throw std::logic_error("synth: kernel has no support inside the epoch window");
    return k / peak;
}

ForwardModel build_model(const SynthConfig& config, const DatasetSpec& spec) {
    ForwardModel model;
    model.sensor_positions = nn::default_sensor_grid(config.channels);
    model.temporal_kernel = sampled_kernel(config, spec);
    Rng rng(config.seed, /*stream=*/2);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.embed_dim));
    model.mixing.reserve(static_cast<std::size_t>(config.n_subjects));
    for (int s = 0; s < config.n_subjects; ++s) {
        Matrix m(config.channels, config.embed_dim);
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const double gain =
                model.sensor_positions(r, 1) >= kHighGainBandY ? kHighGainFactor : 1.0;
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = gain * scale * rng.normal();
        }
        model.mixing.push_back(std::move(m));
    }
    return model;
}

Matrix draw_embeddings(const SynthConfig& config) {
    Rng rng(config.seed, /*stream=*/1);
    Matrix z(config.n_images, config.embed_dim);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index f = 0; f < z.cols(); ++f) z(i, f) = rng.normal();
    }
    return z;
}

double signal_rms(const ForwardModel& model, const Matrix& embeddings) {
    double sum_sq = 0.0;
    std::int64_t count = 0;
    const double kernel_sq_mean = model.temporal_kernel.squaredNorm() /
                                  static_cast<double>(model.temporal_kernel.size());
    for (const auto& mix : model.mixing) {
        const Matrix amp = embeddings * mix.transpose();  // n_images x channels
        sum_sq += amp.squaredNorm() * kernel_sq_mean;
        count += amp.size();
    }
    return std::sqrt(sum_sq / static_cast<double>(count));
}

}  // namespace

SynthDataset generate(const SynthConfig& config) {
    config.validate();
    SynthDataset data;
    data.spec = desk_dataset_spec(config.device);
    data.spec.channels = config.channels;
    data.spec.num_subjects = config.n_subjects;
    data.embeddings = draw_embeddings(config);
    data.model = build_model(config, data.spec);
    data.sensor_positions = data.model.sensor_positions;
    data.model.noise_scale = signal_rms(data.model, data.embeddings) / config.snr;

    Rng noise(config.seed, /*stream=*/3);
    const auto n_trials = static_cast<std::size_t>(config.n_subjects) *
                          static_cast<std::size_t>(config.n_images) *
                          static_cast<std::size_t>(config.n_reps);
    data.epochs.reserve(n_trials);
    data.trials.reserve(n_trials);
    std::int64_t index = 0;
    for (int s = 0; s < config.n_subjects; ++s) {
        for (int i = 0; i < config.n_images; ++i) {
            const Vector amp = data.model.mixing[static_cast<std::size_t>(s)] *
                               data.embeddings.row(i).transpose();
            const Matrix signal = amp * data.model.temporal_kernel.transpose();
            for (int r = 0; r < config.n_reps; ++r) {
                Matrix x = signal;
                for (Eigen::Index cc = 0; cc < x.cols(); ++cc) {
                    for (Eigen::Index rr = 0; rr < x.rows(); ++rr) {
                        x(rr, cc) += data.model.noise_scale * noise.normal();
                    }
                }
                data.epochs.push_back(std::move(x));
                TrialRecord t;
                t.subject_id = s;
                t.image_id = i;
                t.category_id = i / kImagesPerCategory;
                t.repetition_index = r + 1;
                t.session_id = 0;
                t.onset_time = static_cast<double>(index) * data.spec.soa_seconds;
                data.trials.push_back(t);
                ++index;
            }
        }
    }
    return data;
}

ContinuousSynth generate_continuous_meeg(const SynthConfig& config, double rate_hz,
                                         double soa_seconds) {
    config.validate();
    if (is_fmri(config.device)) {
        throw std::invalid_argument("generate_continuous_meeg: device must be eeg or meg");
    }
    if (!(rate_hz > 0.0) || !(soa_seconds > 0.0)) {
        throw std::invalid_argument("generate_continuous_meeg: rate and SOA must be > 0");
    }
    ContinuousSynth out;
    out.spec = desk_dataset_spec(config.device);
    out.spec.channels = config.channels;
    out.spec.num_subjects = config.n_subjects;
    out.spec.soa_seconds = soa_seconds;
    out.embeddings = draw_embeddings(config);
    ForwardModel model = build_model(config, out.spec);
    out.sensor_positions = model.sensor_positions;
    model.noise_scale = signal_rms(model, out.embeddings) / config.snr;

    const int events_per_subject = config.n_images * config.n_reps;
    const double lead_in = std::max(1.0, -out.spec.epoch_start_s + 0.5);
    const double tail = out.spec.epoch_end_s + 1.0;
    const auto n_samples = static_cast<Eigen::Index>(
        std::llround((lead_in + events_per_subject * soa_seconds + tail) * rate_hz));

    // response sampled on the high-rate grid over [epoch_start, epoch_end)
    const auto resp_len = static_cast<Eigen::Index>(
        std::llround((out.spec.epoch_end_s - out.spec.epoch_start_s) * rate_hz));
    Vector kernel_hi(resp_len);
    for (Eigen::Index j = 0; j < resp_len; ++j) {
        kernel_hi(j) =
            response_kernel(config.device, out.spec.epoch_start_s + static_cast<double>(j) / rate_hz);
    }
    const double peak = kernel_hi.cwiseAbs().maxCoeff();
    kernel_hi /= peak;

    Rng noise(config.seed, /*stream=*/3);
    Rng order_rng(config.seed, /*stream=*/4);
    std::int64_t trial_row = 0;
    for (int s = 0; s < config.n_subjects; ++s) {
        prep::ContinuousRecording rec;
        rec.sampling_rate_hz = rate_hz;
        rec.channel_positions = model.sensor_positions;
        rec.data = Matrix(config.channels, n_samples);
        for (Eigen::Index cc = 0; cc < n_samples; ++cc) {
            for (Eigen::Index rr = 0; rr < config.channels; ++rr) {
                rec.data(rr, cc) = model.noise_scale * noise.normal();
            }
        }
        std::vector<std::pair<int, int>> presentation;  // (image, rep)
        presentation.reserve(static_cast<std::size_t>(events_per_subject));
        for (int i = 0; i < config.n_images; ++i) {
            for (int r = 0; r < config.n_reps; ++r) presentation.emplace_back(i, r);
        }
        order_rng.shuffle(presentation);
        for (int e = 0; e < events_per_subject; ++e) {
            const auto [img, rep] = presentation[static_cast<std::size_t>(e)];
            const double onset_t = lead_in + static_cast<double>(e) * soa_seconds;
            const auto onset_sample = static_cast<std::int64_t>(std::llround(onset_t * rate_hz));
            const Vector amp =
                model.mixing[static_cast<std::size_t>(s)] * out.embeddings.row(img).transpose();
            const auto start =
                onset_sample + static_cast<std::int64_t>(std::llround(out.spec.epoch_start_s * rate_hz));
            for (Eigen::Index j = 0; j < resp_len; ++j) {
                const std::int64_t col = start + j;
                if (col < 0 || col >= n_samples) continue;
                rec.data.col(static_cast<Eigen::Index>(col)) += amp * kernel_hi(j);
            }
            rec.events.push_back({onset_sample, onset_t, trial_row});
            TrialRecord t;
            t.subject_id = s;
            t.image_id = img;
            t.category_id = img / kImagesPerCategory;
            t.repetition_index = rep + 1;
            t.session_id = 0;
            t.onset_time = onset_t;
            out.trials.push_back(t);
            ++trial_row;
        }
        out.recordings.push_back(std::move(rec));
    }
    return out;
}

FmriSynth generate_continuous_fmri(const SynthConfig& config, double tr_seconds,
                                   double soa_seconds) {
    config.validate();
    if (!is_fmri(config.device)) {
        throw std::invalid_argument("generate_continuous_fmri: device must be fmri3t or fmri7t");
    }
    if (!(tr_seconds > 0.0) || !(soa_seconds > 0.0)) {
        throw std::invalid_argument("generate_continuous_fmri: TR and SOA must be > 0");
    }
    FmriSynth out;
    out.spec = desk_dataset_spec(config.device);
    out.spec.channels = config.channels;
    out.spec.num_subjects = config.n_subjects;
    out.spec.tr_seconds = tr_seconds;
    out.spec.soa_seconds = soa_seconds;
    out.embeddings = draw_embeddings(config);
    ForwardModel model = build_model(config, out.spec);
    model.noise_scale = signal_rms(model, out.embeddings) / config.snr;

    const int events_per_subject = config.n_images * config.n_reps;
    const double lead_in = 2.0 * tr_seconds;
    const double tail = out.spec.epoch_end_s + 2.0 * tr_seconds;
    const auto n_trs = static_cast<Eigen::Index>(
        std::ceil((lead_in + events_per_subject * soa_seconds + tail) / tr_seconds));

    Rng noise(config.seed, /*stream=*/3);
    Rng drift_rng(config.seed, /*stream=*/5);
    std::int64_t trial_row = 0;
    for (int s = 0; s < config.n_subjects; ++s) {
        prep::FmriSeries run;
        run.tr_seconds = tr_seconds;
        run.data = Matrix(config.channels, n_trs);
        const double run_seconds = static_cast<double>(n_trs) * tr_seconds;
        for (Eigen::Index v = 0; v < config.channels; ++v) {
            // slow drift: one low-frequency cosine per vertex
            const double drift_amp = model.noise_scale * (1.0 + drift_rng.uniform());
            const double drift_period = run_seconds * (0.5 + drift_rng.uniform());
            const double phase = 2.0 * std::numbers::pi * drift_rng.uniform();
            for (Eigen::Index t = 0; t < n_trs; ++t) {
                const double time = static_cast<double>(t) * tr_seconds;
                run.data(v, t) =
                    model.noise_scale * noise.normal() +
                    drift_amp * std::cos(2.0 * std::numbers::pi * time / drift_period + phase);
            }
        }
        for (int e = 0; e < events_per_subject; ++e) {
            const int img = e % config.n_images;
            const int rep = e / config.n_images;
            const double onset_t = lead_in + static_cast<double>(e) * soa_seconds;
            const Vector amp =
                model.mixing[static_cast<std::size_t>(s)] * out.embeddings.row(img).transpose();
            for (Eigen::Index t = 0; t < n_trs; ++t) {
                const double rel = static_cast<double>(t) * tr_seconds - onset_t;
                const double k = response_kernel(config.device, rel);
                if (k != 0.0) run.data.col(t) += amp * k;
            }
            run.events.push_back({0, onset_t, trial_row});
            TrialRecord t;
            t.subject_id = s;
            t.image_id = img;
            t.category_id = img / kImagesPerCategory;
            t.repetition_index = rep + 1;
            t.session_id = 0;
            t.onset_time = onset_t;
            out.trials.push_back(t);
            ++trial_row;
        }
        out.runs.push_back(std::move(run));
    }
    return out;
}

}  // namespace neurodec::synth
