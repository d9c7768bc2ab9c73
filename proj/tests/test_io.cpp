#include "scekf/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace scekf;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::path(testing::TempDir()) / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<TrajectorySample> sample_traj() {
  MotionProfile prof;
  prof.kind = MotionKind::figure_eight;
  prof.duration = 3.0;
  prof.sway_roll_amp = 0.1;
  return generate(prof);
}

}  // namespace

TEST(ImuCsv, RoundTripIsExact) {
  const auto traj = sample_traj();
  auto imu = derive_imu(traj);
  ImuNoiseSpec noise;
  Rng rng(21);
  BiasState bias;
  for (auto& s : imu) {
    const auto c = corrupt(s, bias, noise, rng);
    s = c.sample;
    bias = c.bias;
  }
  const auto path = temp_path("imu_roundtrip.csv");
  write_imu_csv(path, imu);
  const auto back = read_imu_csv(path);
  ASSERT_EQ(back.size(), imu.size());
  for (size_t k = 0; k < imu.size(); ++k) {
    EXPECT_EQ(back[k].t, imu[k].t);
    EXPECT_EQ(back[k].gyro, imu[k].gyro);
    EXPECT_EQ(back[k].accel, imu[k].accel);
  }
  write_imu_csv(path + ".2", back);
  EXPECT_EQ(slurp(path), slurp(path + ".2"));
}

TEST(GtCsv, RoundTripIsExact) {
  const auto traj = sample_traj();
  const auto path = temp_path("gt_roundtrip.csv");
  write_gt_csv(path, traj);
  const auto back = read_gt_csv(path);
  ASSERT_EQ(back.size(), traj.size());
  for (size_t k = 0; k < traj.size(); ++k) {
    EXPECT_EQ(back[k].t, traj[k].t);
    EXPECT_EQ(back[k].R, traj[k].R);
    EXPECT_EQ(back[k].p, traj[k].p);
    EXPECT_EQ(back[k].v, traj[k].v);
  }
}

TEST(EstCsv, RoundTripIsExact) {
  const auto traj = sample_traj();
  const auto imu = derive_imu(traj);
  FilterConfig config;
  NavState init;
  init.t = traj[0].t;
  init.R = traj[0].R;
  init.v = traj[0].v;
  init.p = traj[0].p;
  const auto result = run(imu, {}, config, init);
  const auto path = temp_path("est_roundtrip.csv");
  write_est_csv(path, result.estimates);
  const auto back = read_est_csv(path);
  ASSERT_EQ(back.size(), result.estimates.size());
  for (size_t k = 0; k < back.size(); ++k) {
    EXPECT_EQ(back[k].nav.t, result.estimates[k].nav.t);
    EXPECT_EQ(back[k].nav.R, result.estimates[k].nav.R);
    EXPECT_EQ(back[k].nav.v, result.estimates[k].nav.v);
    EXPECT_EQ(back[k].nav.p, result.estimates[k].nav.p);
    EXPECT_EQ(back[k].nav.b_g, result.estimates[k].nav.b_g);
    EXPECT_EQ(back[k].nav.b_a, result.estimates[k].nav.b_a);
    EXPECT_EQ(back[k].marginal_std, result.estimates[k].marginal_std);
  }
  write_est_csv(path + ".2", back);
  EXPECT_EQ(slurp(path), slurp(path + ".2"));
}

TEST(MeasCsv, OracleExportReingestIsByteIdentical) {
  const auto traj = sample_traj();
  OracleSpec oracle;
  Rng rng(22);
  const auto meas = schedule_measurements(traj, oracle, 1.0, 20.0, rng);
  ASSERT_FALSE(meas.empty());
  const auto path = temp_path("meas_roundtrip.csv");
  write_meas_csv(path, meas);
  const auto back = read_meas_csv(path);
  write_meas_csv(path + ".2", back);
  EXPECT_EQ(slurp(path), slurp(path + ".2"));
}

TEST(MeasCsv, ZeroSigmaRowRejectedWithLineNumber) {
  const auto path = temp_path("meas_zero_sigma.csv");
  detail::write_text_file(path,
                          "t_i,t_j,dx,dy,dz,sx,sy,sz\n"
                          "0,1,0.1,0.2,0.3,0.05,0.05,0.01\n"
                          "1,2,0.1,0.2,0.3,0.05,0,0.01\n");
  try {
    read_meas_csv(path);
    FAIL() << "expected a schema error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(MeasCsv, NonIncreasingTimesRejected) {
  const auto path = temp_path("meas_nonmono.csv");
  detail::write_text_file(path,
                          "t_i,t_j,dx,dy,dz,sx,sy,sz\n"
                          "0,1,0.1,0.2,0.3,0.05,0.05,0.01\n"
                          "0,1,0.1,0.2,0.3,0.05,0.05,0.01\n");
  EXPECT_THROW(read_meas_csv(path), std::runtime_error);
}

TEST(Csv, HeaderOnlyFileGivesEmptyStream) {
  const auto path = temp_path("imu_empty.csv");
  detail::write_text_file(path, std::string(kImuHeader) + "\n");
  EXPECT_TRUE(read_imu_csv(path).empty());
}

TEST(Csv, MissingOrWrongHeaderRejected) {
  const auto path = temp_path("imu_bad_header.csv");
  detail::write_text_file(path, "time,gx,gy,gz,ax,ay,az\n0,0,0,0,0,0,9.81\n");
  EXPECT_THROW(read_imu_csv(path), std::runtime_error);
  detail::write_text_file(path, "");
  EXPECT_THROW(read_imu_csv(path), std::runtime_error);
  EXPECT_THROW(read_imu_csv(temp_path("does_not_exist.csv")), std::runtime_error);
}

TEST(Csv, FieldCountAndNumberErrorsCarryLineNumbers) {
  const auto path = temp_path("imu_bad_rows.csv");
  detail::write_text_file(path,
                          "t,wx,wy,wz,ax,ay,az\n"
                          "0,0,0,0,0,0\n");
  try {
    read_imu_csv(path);
    FAIL() << "expected a field-count error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  detail::write_text_file(path,
                          "t,wx,wy,wz,ax,ay,az\n"
                          "0,0,0,zero,0,0,9.81\n");
  EXPECT_THROW(read_imu_csv(path), std::runtime_error);
}

TEST(Csv, NonOrthonormalRotationRejected) {
  const auto path = temp_path("gt_bad_rot.csv");
  std::string content(kGtHeader);
  content += "\n0,1,0,0,0,1,0,0,0,2,0,0,0,0,0,0\n";  // r22 = 2
  detail::write_text_file(path, content);
  EXPECT_THROW(read_gt_csv(path), std::runtime_error);
}

TEST(DiagJsonl, RoundTripPreservesRecords) {
  std::vector<UpdateOutcome> updates(2);
  updates[0].status = UpdateOutcome::Status::accepted;
  updates[0].t_i = 0.0;
  updates[0].t_j = 1.0;
  updates[0].innovation = Vec3(0.01, -0.02, 0.003);
  updates[0].nis = 2.5;
  updates[0].clone_count = 21;
  updates[1].status = UpdateOutcome::Status::rejected_gate;
  updates[1].t_i = 0.05;
  updates[1].t_j = 1.05;
  updates[1].innovation = Vec3(1.0, 2.0, 3.0);
  updates[1].nis = 40.0;
  updates[1].clone_count = 21;

  const auto path = temp_path("diag.jsonl");
  write_diag_jsonl(path, updates);
  const auto back = read_diag_jsonl(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].t_j, 1.0);
  EXPECT_EQ(back[0].innovation, Vec3(0.01, -0.02, 0.003));
  EXPECT_EQ(back[0].nis, 2.5);
  EXPECT_TRUE(back[0].accepted);
  EXPECT_EQ(back[0].clone_count, 21);
  EXPECT_FALSE(back[1].accepted);
  EXPECT_EQ(back[1].status, "rejected_gate");
}

TEST(BufferCsv, HeaderCarriesShapeRateAndAnchor) {
  Eigen::Matrix<double, Eigen::Dynamic, 6> buffer(4, 6);
  buffer.setRandom();
  const auto path = temp_path("buffer.csv");
  write_buffer_csv(path, buffer, 200.0, 12.5);
  const std::string content = slurp(path);
  EXPECT_EQ(content.rfind("# rows=4 rate=200 anchor_t=12.5\n", 0), 0u);
  EXPECT_NE(content.find(kBufferHeader), std::string::npos);
  EXPECT_EQ(std::count(content.begin(), content.end(), '\n'), 6);
}
