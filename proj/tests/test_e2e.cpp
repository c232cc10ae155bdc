// Tests against the model trained by the `train_fixture_model` ctest fixture.

#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <thread>

#include "cli_support.hpp"

using namespace servoguard;
using sgtest::run_cli;

namespace {

std::string model_path() { return sgtest::fixture("model.trnw"); }

std::string trace_file(const sgtest::ScratchDir& dir, const std::string& name, const std::vector<std::string>& sim_args) {
  std::vector<std::string> args{"simulate", "--out", dir / name};
  args.insert(args.end(), sim_args.begin(), sim_args.end());
  const auto r = run_cli(args);
  EXPECT_EQ(r.code, 0) << r.err;
  return dir / name;
}

}  // namespace

TEST(EndToEnd, ModelFileIsWellFormed) {
  ASSERT_TRUE(std::filesystem::exists(model_path())) << "run the fixture first";
  EXPECT_EQ(std::filesystem::file_size(model_path()), 31749u);
  const auto net = nn::load_weights_file<double>(model_path());
  EXPECT_EQ(net.parameter_count(), 7914u);
}

TEST(EndToEnd, DetectTripsOnOverload) {
  sgtest::ScratchDir dir("e2e_detect");
  const auto path = trace_file(dir, "fault.csv", {"--duration", "8", "--fault", "--onset", "3", "--seed", "101"});
  const auto r = run_cli({"detect", "--weights", model_path(), "--trace", path});
  EXPECT_EQ(r.code, 10) << r.err;
  EXPECT_NE(r.err.find("shutdown: latched"), std::string::npos);

  // The first window lying wholly inside the plateau is classified as a fault.
  std::istringstream csv(r.out);
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "seq,probability,is_fault,tripped");
  const std::size_t first_plateau_seq = (3050 + 255) / 256;  // onset 3 s, default rise 0.05 s
  bool checked = false;
  while (std::getline(csv, line)) {
    std::size_t seq = std::stoul(line.substr(0, line.find(',')));
    if (seq == first_plateau_seq) {
      EXPECT_EQ(line.substr(line.size() - 4, 2), ",1") << line;
      checked = true;
    }
  }
  EXPECT_TRUE(checked);
}

TEST(EndToEnd, DetectQuietOnHealthyRun) {
  sgtest::ScratchDir dir("e2e_healthy");
  const auto path = trace_file(dir, "ok.csv", {"--duration", "8", "--seed", "102"});
  const auto r = run_cli({"detect", "--weights", model_path(), "--trace", path});
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST(EndToEnd, DetectSeesShutdownLatchWithinBound) {
  const auto net = nn::network_cast<float>(nn::load_weights_file<double>(model_path()));
  FaultSpec f;
  f.onset_time = 3.0;
  const auto trace = simulate_trace(MotorProfile{}, 8.0, f, 103);
  const auto lat = detection_latency(net, trace, DetectorConfig{});
  ASSERT_TRUE(lat.detected);
  EXPECT_GT(lat.seconds, 0.0);
  EXPECT_LE(lat.seconds, dual::worst_case_trip_latency() + 1e-9);
}

TEST(EndToEnd, LoopbackClientGetsFaultVerdict) {
  const auto net = nn::network_cast<float>(nn::load_weights_file<double>(model_path()));
  FaultSpec f;
  f.onset_time = 1.0;
  const auto trace = simulate_trace(MotorProfile{}, 4.0, f, 104);
  // Only plateau samples go over the wire, so every window is an overload window.
  std::vector<double> plateau(trace.current.begin() + 1200, trace.current.end());
  auto [a, b] = wire::socket_pair();
  std::thread server([&, conn = std::move(b)]() mutable { wire::server_session(net, conn); });
  wire::ClientConfig cc;
  cc.reply_timeout_ms = 5000;
  const auto rep = wire::client_session(plateau, trace.sample_interval, a, cc);
  a.shutdown_write();
  server.join();
  ASSERT_FALSE(rep.verdicts.empty());
  EXPECT_EQ(rep.verdicts[0].seq, 0u);
  EXPECT_EQ(rep.verdicts[0].label, 1);
  EXPECT_TRUE(rep.shutdown);
}

TEST(EndToEnd, ServeAndClientOverTcp) {
  sgtest::ScratchDir dir("e2e_tcp");
  const auto port_file = dir / "port";
  int serve_code = -1;
  std::thread server([&] {
    serve_code = run_cli({"serve", "--weights", model_path(), "--listen", "127.0.0.1:0", "--sessions", "1",
                      "--port-file", port_file})
                     .code;
  });
  for (int i = 0; i < 500 && !std::filesystem::exists(port_file); ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  ASSERT_TRUE(std::filesystem::exists(port_file));
  std::string port = sgtest::slurp(port_file);
  port.erase(port.find_last_not_of("\n") + 1);

  const auto path = trace_file(dir, "fault.csv", {"--duration", "8", "--fault", "--onset", "3", "--seed", "105"});
  const auto r = run_cli({"client", "--connect", "127.0.0.1:" + port, "--trace", path, "--timeout-ms", "5000"});
  server.join();
  EXPECT_EQ(r.code, 10) << r.err;
  EXPECT_EQ(serve_code, 0);
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "seq,label,probability");
  EXPECT_NE(r.err.find("missed=0"), std::string::npos) << r.err;
}

TEST(EndToEnd, ClientWithoutServerIsDataError) {
  sgtest::ScratchDir dir("e2e_noserver");
  const auto path = trace_file(dir, "ok.csv", {"--duration", "2"});
  wire::TcpListener probe(wire::parse_endpoint("127.0.0.1:0"));
  const std::string port = std::to_string(probe.port());
  // The listener accepts nothing and is closed before connecting, so the connection is refused.
  { auto gone = std::move(probe); }
  EXPECT_EQ(run_cli({"client", "--connect", "127.0.0.1:" + port, "--trace", path}).code, 3);
}

TEST(EndToEnd, DualMotorWithMeasuredLatency) {
  const auto r = run_cli({"dualmotor", "--weights", model_path(), "--fault-time", "3", "--seed", "106", "--step", "0.1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto at = r.err.find("trip_latency_s=");
  ASSERT_NE(at, std::string::npos);
  const double latency = std::stod(r.err.substr(at + 15));
  EXPECT_GT(latency, 0.0);
  EXPECT_LE(latency, dual::worst_case_trip_latency());
  EXPECT_NE(r.err.find("failover"), std::string::npos);
}
