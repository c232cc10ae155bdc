#pragma once

/// `servoguard` command line: one subcommand per pipeline stage. Outputs are
/// built in memory and written with temp-and-rename, so a failing command
/// leaves no files behind.
///
/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
/// 3 data or format error, 10 the detector latched a shutdown.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "servoguard/dataset.hpp"
#include "servoguard/detector.hpp"
#include "servoguard/dualmotor.hpp"
#include "servoguard/errors.hpp"
#include "servoguard/log.hpp"
#include "servoguard/network.hpp"
#include "servoguard/session.hpp"
#include "servoguard/signal.hpp"
#include "servoguard/toy_resnet.hpp"
#include "servoguard/trainer.hpp"
#include "servoguard/transform.hpp"
#include "servoguard/weights.hpp"

namespace servoguard::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kDataError = 3, kTripped = 10 };

struct Streams {
  std::istream& in = std::cin;
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

/// Writes `text` to `path`, or to `out` when the path is empty or "-".
inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    out.flush();
  } else {
    write_file_atomic(path, text);
  }
}

inline SignalTrace load_trace(const std::string& path, std::istream& in) {
  if (path.empty() || path == "-") return read_trace(in);
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  return read_trace(f);
}

inline Debounce parse_debounce(const std::string& text) {
  const auto comma = text.find(',');
  Debounce d;
  try {
    if (comma == std::string::npos) throw std::invalid_argument("comma");
    std::size_t a = 0, b = 0;
    d.k = std::stoul(text.substr(0, comma), &a);
    d.m = std::stoul(text.substr(comma + 1), &b);
    if (a != comma || b != text.size() - comma - 1) throw std::invalid_argument("junk");
  } catch (const std::exception&) {
    throw ConfigError("--debounce expects k,m (for example 2,3), got '" + text + "'");
  }
  return d;
}

struct DetectorFlags {
  std::size_t hop = kDefaultHop;
  std::string debounce = "2,3";
  double threshold = 0.5;

  void add_to(CLI::App* cmd, bool with_hop = true) {
    if (with_hop) cmd->add_option("--hop", hop, "Samples between inferences")->capture_default_str();
    cmd->add_option("--debounce", debounce, "Trip when k of the last m windows are faulty")->capture_default_str();
    cmd->add_option("--threshold", threshold, "Fault probability threshold")->capture_default_str();
  }

  DetectorConfig config() const {
    DetectorConfig cfg;
    cfg.hop = hop;
    cfg.debounce = parse_debounce(debounce);
    cfg.score_threshold = threshold;
    cfg.validate();
    return cfg;
  }
};

inline nn::Network<float> load_inference_net(const std::string& path) {
  return nn::network_cast<float>(nn::load_weights_file<double>(path));
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace detail

/// Runs one command line. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, Streams io = {}) {
  CLI::App app{"DC servo overload fault detection toolkit", "servoguard"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "servoguard 1.0");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic servo current trace (CSV)");
  double sim_duration = 10.0;
  std::uint64_t sim_seed = 1;
  bool sim_fault = false;
  MotorProfile sim_profile;
  FaultSpec sim_spec;
  std::optional<double> sim_shutdown;
  std::string sim_out;
  sim->add_option("--duration", sim_duration, "Trace length in seconds")->capture_default_str();
  sim->add_option("--seed", sim_seed, "Noise seed")->capture_default_str();
  sim->add_flag("--fault", sim_fault, "Inject an overload fault");
  sim->add_option("--nominal", sim_profile.nominal_current, "Cruise current (A)")->capture_default_str();
  sim->add_option("--noise", sim_profile.noise_amplitude, "Healthy noise half-width (A)")->capture_default_str();
  sim->add_option("--dt", sim_profile.sample_interval, "Sample interval (s)")->capture_default_str();
  sim->add_option("--onset", sim_spec.onset_time, "Fault onset (s)")->capture_default_str();
  sim->add_option("--rise", sim_spec.rise_time, "Fault rise time (s)")->capture_default_str();
  sim->add_option("--plateau", sim_spec.plateau_mean, "Overload plateau mean (A)")->capture_default_str();
  sim->add_option("--band", sim_spec.plateau_band, "Overload fluctuation half-width (A)")->capture_default_str();
  sim->add_option("--shutdown", sim_shutdown, "Shutdown time (s); current is zero afterwards");
  sim->add_option("--out", sim_out, "Output path (default stdout)");

  // build-dataset
  auto* bd = app.add_subcommand("build-dataset", "Window, transform and label traces into a dataset file");
  std::vector<std::string> bd_traces;
  std::size_t bd_synthetic = 0;
  std::uint64_t bd_seed = 1;
  std::size_t bd_hop = kDefaultHop;
  std::string bd_out;
  bd->add_option("--trace", bd_traces, "Trace CSV ('-' for stdin); repeatable");
  bd->add_option("--synthetic", bd_synthetic, "Generate this many images from random simulated runs");
  bd->add_option("--seed", bd_seed, "Seed for --synthetic")->capture_default_str();
  bd->add_option("--hop", bd_hop, "Window hop in samples")->capture_default_str();
  bd->add_option("--out", bd_out, "Dataset file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train the toy ResNet on a dataset file");
  std::string tr_dataset, tr_out, tr_report;
  TrainConfig tr_cfg;
  tr->add_option("--dataset", tr_dataset, "Dataset file")->required();
  tr->add_option("--out", tr_out, "Weight file to write")->required();
  tr->add_option("--seed", tr_cfg.seed, "Seed for split, initialization and shuffling")->capture_default_str();
  tr->add_option("--epochs", tr_cfg.epochs)->capture_default_str();
  tr->add_option("--batch", tr_cfg.batch_size)->capture_default_str();
  tr->add_option("--lr", tr_cfg.learning_rate)->capture_default_str();
  tr->add_option("--patience", tr_cfg.patience)->capture_default_str();
  tr->add_option("--report", tr_report, "Per-epoch CSV report path");

  // eval
  auto* ev = app.add_subcommand("eval", "Accuracy and confusion matrix of a weight file on a dataset");
  std::string ev_weights, ev_dataset;
  ev->add_option("--weights", ev_weights)->required();
  ev->add_option("--dataset", ev_dataset)->required();

  // detect
  auto* dt = app.add_subcommand("detect", "Stream a trace through the on-device detector");
  std::string dt_weights, dt_trace;
  detail::DetectorFlags dt_flags;
  dt->add_option("--weights", dt_weights)->required();
  dt->add_option("--trace", dt_trace, "Trace CSV ('-' for stdin)")->required();
  dt_flags.add_to(dt);

  // serve
  auto* sv = app.add_subcommand("serve", "External-processor server: classify windows received over TCP");
  std::string sv_weights, sv_listen = "127.0.0.1:5555", sv_port_file;
  std::size_t sv_sessions = 0;
  detail::DetectorFlags sv_flags;
  sv->add_option("--weights", sv_weights)->required();
  sv->add_option("--listen", sv_listen, "host:port (port 0 picks a free port)")->capture_default_str();
  sv->add_option("--sessions", sv_sessions, "Exit after this many connections (0 = run forever)")->capture_default_str();
  sv->add_option("--port-file", sv_port_file, "Write the bound port to this file once listening");
  sv_flags.add_to(sv, false);

  // client
  auto* cl = app.add_subcommand("client", "Microcontroller-side client: stream a trace to a server");
  std::string cl_connect = "127.0.0.1:5555", cl_trace;
  wire::ClientConfig cl_cfg;
  cl->add_option("--connect", cl_connect, "host:port")->capture_default_str();
  cl->add_option("--trace", cl_trace, "Trace CSV ('-' for stdin)")->required();
  cl->add_option("--hop", cl_cfg.hop)->capture_default_str();
  cl->add_option("--timeout-ms", cl_cfg.reply_timeout_ms, "Verdict deadline per window")->capture_default_str();

  // dualmotor
  auto* dm = app.add_subcommand("dualmotor", "Single vs dual motor energy and failover simulation");
  std::string dm_mode = "dual", dm_out, dm_weights;
  std::optional<double> dm_fault_time, dm_trip_latency, dm_kc;
  std::size_t dm_fault_motor = 0;
  double dm_step = 0.01;
  std::uint64_t dm_seed = 1;
  detail::DetectorFlags dm_flags;
  dm->add_option("--mode", dm_mode)->check(CLI::IsMember({"single", "dual"}))->capture_default_str();
  dm->add_option("--fault-time", dm_fault_time, "Inject an overload at this time (s)");
  dm->add_option("--fault-motor", dm_fault_motor)->capture_default_str();
  dm->add_option("--trip-latency", dm_trip_latency, "Onset-to-trip delay (s); default is the detector worst case");
  dm->add_option("--weights", dm_weights, "Measure the trip latency with this model on a simulated fault");
  dm->add_option("--seed", dm_seed, "Seed of the simulated fault used with --weights")->capture_default_str();
  dm->add_option("--kc", dm_kc, "Copper loss coefficient (default: calibrated to the reference cycle)");
  dm->add_option("--step", dm_step, "Ledger step (s)")->capture_default_str();
  dm->add_option("--out", dm_out, "Ledger CSV path (default stdout)");
  dm_flags.add_to(dm);

  // export-image
  auto* ex = app.add_subcommand("export-image", "Export the feature image of one window");
  std::string ex_trace, ex_format = "pgm", ex_out;
  std::size_t ex_start = 0;
  ex->add_option("--trace", ex_trace, "Trace CSV ('-' for stdin)")->required();
  ex->add_option("--start", ex_start, "Window start sample")->capture_default_str();
  ex->add_option("--format", ex_format)->check(CLI::IsMember({"csv", "pgm"}))->capture_default_str();
  ex->add_option("--out", ex_out, "Output path (default stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sim) {
      std::optional<FaultSpec> fault;
      if (sim_fault) {
        sim_spec.shutdown_time = sim_shutdown;
        fault = sim_spec;
      } else if (sim_shutdown) {
        throw ConfigError("--shutdown requires --fault");
      }
      const SignalTrace trace = simulate_trace(sim_profile, sim_duration, fault, sim_seed);
      detail::emit(sim_out, trace_to_csv(trace), io.out);
      return kOk;
    }

    if (*bd) {
      if (bd_hop == 0) throw ConfigError("--hop must be >= 1");
      if (bd_synthetic > 0 && !bd_traces.empty()) throw ConfigError("use either --synthetic or --trace, not both");
      std::vector<LabeledImage> images;
      if (bd_synthetic > 0) {
        SyntheticConfig sc;
        sc.hop = bd_hop;
        images = synthesize_images(bd_synthetic, bd_seed, sc);
      } else {
        if (bd_traces.empty()) bd_traces.push_back("-");
        for (const auto& path : bd_traces) {
          const SignalTrace trace = detail::load_trace(path, io.in);
          auto w = window_and_label(trace, bd_hop);
          if (w.too_short) io.err << "servoguard: warning: " << path << " is shorter than one window, skipped\n";
          for (auto& li : w.images) images.push_back(std::move(li));
        }
      }
      if (images.empty()) throw DataError("no windows produced; every trace is shorter than 1024 samples");
      save_dataset_file(bd_out, images);
      io.err << "images=" << images.size() << " fault_fraction=" << detail::fmt(positive_fraction(images)) << '\n';
      return kOk;
    }

    if (*tr) {
      const auto images = load_dataset_file(tr_dataset);
      const DatasetSplit data = split(images, tr_cfg.seed);
      auto net = nn::build_toy_resnet<double>(tr_cfg.seed);
      const TrainReport report = train(net, data, tr_cfg);
      const Bytes blob = nn::save_weights(net);
      if (!tr_report.empty()) {
        std::ostringstream csv;
        write_report_csv(csv, report);
        write_file_atomic(tr_report, csv.str());
      }
      write_file_atomic(tr_out, blob);
      io.err << "train=" << data.train.size() << " validation=" << data.validation.size()
             << " test=" << data.test.size() << " epochs=" << report.history.size()
             << " best_epoch=" << report.best_epoch << " test_accuracy=" << detail::fmt(report.test_accuracy)
             << " seconds=" << detail::fmt(report.wall_seconds) << '\n';
      return kOk;
    }

    if (*ev) {
      const auto net = nn::load_weights_file<double>(ev_weights);
      const auto images = load_dataset_file(ev_dataset);
      const EvalResult r = evaluate<double>(net, images);
      const auto& c = r.confusion.counts;
      io.out << "images=" << images.size() << " accuracy=" << detail::fmt(r.accuracy)
             << " loss=" << detail::fmt(r.loss) << '\n'
             << "confusion actual\\predicted: [[" << c[0][0] << ',' << c[0][1] << "],[" << c[1][0] << ',' << c[1][1]
             << "]]\n";
      return kOk;
    }

    if (*dt) {
      const DetectorConfig cfg = dt_flags.config();
      const auto net = detail::load_inference_net(dt_weights);
      const SignalTrace trace = detail::load_trace(dt_trace, io.in);
      if (trace.size() < kWindowLength) throw DataError("trace is shorter than one 1024-sample window");
      std::ostringstream csv;
      write_verdict_header(csv);
      csv.precision(9);
      StreamingDetector det(net, cfg, trace.sample_interval);
      std::optional<Verdict> trip;
      for (double x : trace.current)
        if (auto v = det.push_sample(x)) {
          write_verdict(csv, *v);
          if (v->tripped && !trip) trip = v;
        }
      io.out << csv.str();
      io.out.flush();
      if (trip) {
        io.err << "shutdown: latched at window " << trip->window_seq << " (t=" << detail::fmt(trace.time(trip->last_sample))
               << " s)\n";
        return kTripped;
      }
      return kOk;
    }

    if (*sv) {
      wire::ServerConfig scfg;
      sv_flags.hop = kDefaultHop;
      scfg.detector = sv_flags.config();
      const auto net = detail::load_inference_net(sv_weights);
      wire::TcpListener listener(wire::parse_endpoint(sv_listen));
      if (!sv_port_file.empty()) write_file_atomic(sv_port_file, std::to_string(listener.port()) + "\n");
      log::info("serve: listening on port ", listener.port());
      for (std::size_t n = 0; sv_sessions == 0 || n < sv_sessions; ++n) {
        wire::FdStream conn = listener.accept();
        const wire::ServerReport rep = wire::server_session(net, conn, scfg);
        io.err << "session=" << n << " windows=" << rep.verdicts.size() << " shutdown_sent=" << rep.shutdown_sent
               << " crc_failures=" << rep.crc_failures << " aborted=" << rep.aborted << '\n';
      }
      return kOk;
    }

    if (*cl) {
      if (cl_cfg.hop == 0) throw ConfigError("--hop must be >= 1");
      if (cl_cfg.reply_timeout_ms <= 0) throw ConfigError("--timeout-ms must be positive");
      const SignalTrace trace = detail::load_trace(cl_trace, io.in);
      wire::FdStream conn = wire::connect_tcp(wire::parse_endpoint(cl_connect));
      const wire::ClientReport rep = wire::client_session(trace.current, trace.sample_interval, conn, cl_cfg);
      conn.shutdown_write();
      std::ostringstream csv;
      csv.precision(9);
      csv << "seq,label,probability\n";
      for (const auto& v : rep.verdicts) csv << v.seq << ',' << int{v.label} << ',' << v.probability << '\n';
      io.out << csv.str();
      io.out.flush();
      double worst = 0;
      for (double ms : rep.round_trip_ms) worst = std::max(worst, ms);
      io.err << "sent=" << rep.sent.size() << " answered=" << rep.round_trip_ms.size()
             << " missed=" << rep.missed_deadlines << " max_round_trip_ms=" << detail::fmt(worst) << '\n';
      if (rep.aborted) throw ProtocolError("session aborted");
      if (rep.shutdown) {
        io.err << "shutdown: command received for window " << rep.shutdown_seq.value_or(0) << '\n';
        return kTripped;
      }
      return kOk;
    }

    if (*dm) {
      dual::EfficiencyModel model = dual::calibrated_model();
      if (dm_kc) model.copper = *dm_kc;
      model.validate();
      const DetectorConfig dcfg = dm_flags.config();
      dual::SimConfig cfg;
      cfg.mode = dm_mode == "single" ? dual::Mode::single : dual::Mode::dual;
      cfg.step = dm_step;
      cfg.trip_latency = dual::worst_case_trip_latency(dcfg.hop, dcfg.debounce.k);
      if (!dm_weights.empty()) {
        if (dm_trip_latency) throw ConfigError("use either --weights or --trip-latency, not both");
        const auto net = detail::load_inference_net(dm_weights);
        FaultSpec f;
        f.onset_time = 2.0;
        const SignalTrace probe = simulate_trace(MotorProfile{}, 8.0, f, dm_seed);
        const LatencyResult lat = detection_latency(net, probe, dcfg);
        if (!lat.detected) throw DataError("the model never tripped on the simulated overload");
        cfg.trip_latency = lat.seconds;
      }
      if (dm_trip_latency) cfg.trip_latency = *dm_trip_latency;
      if (dm_fault_time) cfg.faults.push_back({*dm_fault_time, dm_fault_motor});

      const dual::DutyCycle duty = dual::reference_duty_cycle();
      const auto res = dual::simulate_duty(model, duty, cfg);
      std::ostringstream csv;
      dual::write_ledger_csv(csv, res.ledger);
      detail::emit(dm_out, csv.str(), io.out);
      std::ostringstream events;
      dual::write_events(events, res.events);
      io.err << events.str();
      io.err << "mode=" << dm_mode << " k_c=" << detail::fmt(model.copper)
             << " trip_latency_s=" << detail::fmt(cfg.trip_latency)
             << " energy_j=" << detail::fmt(res.ledger.total_energy())
             << " mechanical_j=" << detail::fmt(res.ledger.total_mechanical())
             << " losses_j=" << detail::fmt(res.ledger.total_losses())
             << " fault_free_saving=" << detail::fmt(dual::energy_saving(model, duty)) << '\n';
      return res.mission_failed ? kTripped : kOk;
    }

    if (*ex) {
      const SignalTrace trace = detail::load_trace(ex_trace, io.in);
      if (trace.size() < kWindowLength || ex_start > trace.size() - kWindowLength)
        throw ConfigError("--start leaves less than 1024 samples in the trace");
      const FeatureImage img = pid_transform(window_at(trace, ex_start), ex_start, trace.rng_seed);
      std::ostringstream os;
      if (ex_format == "pgm")
        write_pgm(os, img);
      else
        write_image_csv(os, img);
      detail::emit(ex_out, os.str(), io.out);
      return kOk;
    }
  } catch (const ConfigError& e) {
    io.err << "servoguard: usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DomainError& e) {
    io.err << "servoguard: usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingError& e) {
    io.err << "servoguard: training failed: " << e.what() << '\n';
    return kFailure;
  } catch (const Error& e) {
    io.err << "servoguard: data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    io.err << "servoguard: error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace servoguard::cli
