#include "doctest.h"

#include "edln/io.hpp"

#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>

using namespace edln;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("edln_test_io_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream s(text);
  for (std::string l; std::getline(s, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("matrix json round trip is bit exact") {
  Matrix m(3, 2);
  m << 1.0 / 3.0, -2.5e-300, std::numeric_limits<double>::denorm_min(), 1e300, 0.1 + 0.2, -0.0;
  const Matrix back = matrix_from_json(Json::parse(matrix_to_json(m).dump()));
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 2);
  for (Eigen::Index i = 0; i < m.size(); ++i) CHECK(back.data()[i] == m.data()[i]);
  CHECK(matrix_from_json(Json::array()).size() == 0);
}

TEST_CASE("network save/load round trip") {
  const EdlnNetwork net = random_network(5, {7, 4}, 3, 3.0, 11);
  const auto dir = temp_dir("net");
  save_network(net, dir / "sub" / "n.net");
  const EdlnNetwork back = load_network(dir / "sub" / "n.net");
  CHECK(back.depth() == 3);
  CHECK(back.layer_dims() == net.layer_dims());
  CHECK(back.m_in() == net.m_in());
  CHECK(back.m_out() == net.m_out());
  for (int i = 0; i < net.depth(); ++i) CHECK(back.weights()[i] == net.weights()[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("data model round trip keeps views, label transforms and feature noise") {
  DataModel dm = make_data_model(6, 4, 3, 3.0, 2.0, 5);
  add_label_transforms(dm, 4.0, 9, {"B"});
  add_heterogeneity(dm, 0.3, {"A"});
  const auto dir = temp_dir("dm");
  save_data_model(dm, dir / "dm.json");
  const DataModel back = load_data_model(dir / "dm.json");
  CHECK(back.input_dim == 6);
  CHECK(back.output_dim == 4);
  CHECK(back.seed == dm.seed);
  CHECK(back.v_star == dm.v_star);
  CHECK(back.sigma_x == dm.sigma_x);
  CHECK(back.sigma_eps == dm.sigma_eps);
  CHECK(back.tags() == dm.tags());
  for (const auto& t : dm.tags()) CHECK(back.view(t) == dm.view(t));
  REQUIRE(back.label_transforms.count("B") == 1);
  CHECK(back.label_transforms.at("B") == dm.label_transforms.at("B"));
  CHECK(back.label_transforms.count("A") == 0);
  REQUIRE(back.heterogeneity.count("A") == 1);
  CHECK(back.heterogeneity.at("A") == dm.heterogeneity.at("A"));

  const ViewModel va = view_model(dm, "B"), vb = view_model(back, "B");
  CHECK(va.min_loss == vb.min_loss);
  CHECK(va.optimal_map == vb.optimal_map);
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed documents raise FormatError") {
  const EdlnNetwork net = random_network(3, {3}, 2, 2.0, 1);
  Json j = network_to_json(net);

  Json wrong_format = j;
  wrong_format["format"] = "edln.data_model";
  CHECK_THROWS_AS(network_from_json(wrong_format), FormatError);

  Json no_weights = j;
  no_weights.erase("weights");
  CHECK_THROWS_AS(network_from_json(no_weights), FormatError);

  Json bad_depth = j;
  bad_depth["depth"] = 5;
  CHECK_THROWS_AS(network_from_json(bad_depth), FormatError);

  Json bad_dims = j;
  bad_dims["dims"] = {3, 4, 2};
  CHECK_THROWS_AS(network_from_json(bad_dims), FormatError);

  CHECK_THROWS_AS(matrix_from_json(Json::parse("[[1,2],[3]]")), FormatError);
  CHECK_THROWS_AS(matrix_from_json(Json::parse("[[1,\"x\"]]")), FormatError);
  CHECK_THROWS_AS(matrix_from_json(Json::parse("{\"a\":1}")), FormatError);

  const DataModel dm = make_data_model(4, 3, 2, 2.0, 2.0, 3);
  Json d = data_model_to_json(dm);
  d["sigma_x"] = matrix_to_json(Matrix::Identity(3, 3));
  CHECK_THROWS_AS(data_model_from_json(d), FormatError);

  const auto dir = temp_dir("bad");
  write_text_file(dir / "junk.net", "{not json");
  CHECK_THROWS_AS(load_network(dir / "junk.net"), FormatError);
  CHECK_THROWS(load_network(dir / "missing.net"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("format_double") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
  const double x = 1.0 / 7.0;
  CHECK(std::stod(format_double(x)) == x);
}

TEST_CASE("csv layouts") {
  const DataModel dm = make_data_model(3, 2, 2, 2.0, 2.0, 8);
  const PairedBatch b = sample_batch(dm, 4, {"A", "B"}, 1);
  const auto rows = lines(batch_csv(b));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "sample,x_1,x_2,x_3,x_A_1,x_A_2,x_A_3,y_A_1,y_A_2,x_B_1,x_B_2,x_B_3,y_B_1,y_B_2");
  CHECK(rows[2].substr(0, 2) == "1,");
  CHECK(std::stod(rows[1].substr(2, rows[1].find(',', 2) - 2)) == b.x_base(0, 0));

  const EdlnNetwork net = random_network(3, {3, 3}, 2, 2.0, 2);
  const BalanceReport rep = balance_report(net, Expectation::analytic(view_model(dm, "A")));
  const auto brows = lines(balance_csv(rep));
  REQUIRE(brows.size() == rep.interfaces.size() + 1);
  CHECK(brows[0] == "interface,gradient_balance,layer_condition,rowcol");

  Matrix scores(2, 3);
  scores << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
  const auto arows = lines(alignment_csv(scores, {1, 2}, {1, 2, 3}));
  REQUIRE(arows.size() == 3);
  CHECK(arows[0] == "layer_a,b_1,b_2,b_3");
  CHECK(arows[2] == "2,0.40000000000000002,0.5,0.59999999999999998");
  CHECK_THROWS_AS(alignment_csv(scores, {1}, {1, 2, 3}), ShapeError);
}
