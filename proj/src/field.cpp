#include "nsrf/field.hpp"

#include <cmath>
#include <utility>

#include "nsrf/check.hpp"

namespace nsrf {
namespace {

ad::Tensor uniform_init(ad::Shape shape, double fan_in, double fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> v(static_cast<size_t>(ad::shape_numel(shape)));
  for (double& x : v) x = rng.uniform(-a, a);
  return ad::Tensor(std::move(shape), std::move(v));
}

void init_resblock(ParamStore& store, const std::string& name, int64_t width, Rng& rng) {
  const double w = static_cast<double>(width);
  store.add(name + ".l1.w", uniform_init({width, width}, w, w, rng));
  store.add(name + ".l1.b", ad::Tensor::zeros({width}));
  store.add(name + ".l2.w", uniform_init({width, width}, w, w, rng));
  store.add(name + ".l2.b", ad::Tensor::zeros({width}));
}

// relu(x + L2(relu(L1(x)))): two linear layers inside an identity skip.
ad::Tensor resblock(const ad::Tensor& x, const ParamGetter& p, const std::string& name) {
  ad::Tensor h = ad::relu(ad::linear(x, p(name + ".l1.w"), p(name + ".l1.b")));
  h = ad::linear(h, p(name + ".l2.w"), p(name + ".l2.b"));
  return ad::relu(ad::add(x, h));
}

}  // namespace

void init_field_params(ParamStore& store, const std::string& prefix, const FieldDims& dims,
                       Rng& rng) {
  NSRF_CHECK(dims.gamma_dim >= 3 && dims.feat_dim >= 1 && dims.hidden >= 1 &&
                 dims.n_fg_classes >= 1,
             "field widths must be positive (gamma {}, feat {}, hidden {}, classes {})",
             dims.gamma_dim, dims.feat_dim, dims.hidden, dims.n_fg_classes);
  const int64_t g = dims.gamma_dim, k = dims.feat_dim, w = dims.hidden, c = dims.n_fg_classes;
  // The three projections act as one linear layer over the concatenated
  // input [gamma ‖ d ‖ phi], so they share that layer's fan-in.
  const double fan_in = static_cast<double>(g + 3 + k), fan_out = static_cast<double>(w);
  store.add(prefix + ".in.gamma.w", uniform_init({g, w}, fan_in, fan_out, rng));
  store.add(prefix + ".in.dir.w", uniform_init({3, w}, fan_in, fan_out, rng));
  store.add(prefix + ".in.feat.w", uniform_init({k, w}, fan_in, fan_out, rng));
  store.add(prefix + ".in.b", ad::Tensor::zeros({w}));
  for (int i = 1; i <= 3; ++i) init_resblock(store, prefix + ".trunk" + std::to_string(i), w, rng);
  for (int i = 1; i <= 2; ++i) init_resblock(store, prefix + ".sem" + std::to_string(i), w, rng);
  store.add(prefix + ".sem.out.w", uniform_init({w, c}, static_cast<double>(w), static_cast<double>(c), rng));
  store.add(prefix + ".sem.out.b", ad::Tensor::zeros({c}));
  for (int i = 1; i <= 2; ++i) init_resblock(store, prefix + ".geo" + std::to_string(i), w, rng);
  store.add(prefix + ".geo.out.w", uniform_init({w, 4}, static_cast<double>(w), 4.0, rng));
  store.add(prefix + ".geo.out.b", ad::Tensor::zeros({4}));
}

FieldBatch field_eval_batch(const ad::Tensor& gamma, const ad::Tensor& dirs,
                            const std::vector<ad::Tensor>& view_features,
                            const ParamGetter& params, const std::string& prefix,
                            const FieldDims& dims, bool use_viewdir) {
  NSRF_CHECK(!view_features.empty(), "field evaluation needs at least one source view");
  NSRF_CHECK(gamma.rank() == 2 && gamma.dim(1) == dims.gamma_dim,
             "positional encoding batch is {}, expected [P x {}]", ad::shape_str(gamma.shape()),
             dims.gamma_dim);
  const int64_t n_points = gamma.dim(0);
  NSRF_CHECK(dirs.rank() == 2 && dirs.dim(0) == n_points && dirs.dim(1) == 3,
             "direction batch is {}, expected [{} x 3]", ad::shape_str(dirs.shape()), n_points);
  auto p = [&](const std::string& name) -> const ad::Tensor& { return params(prefix + name); };

  ad::Tensor base = ad::matmul(gamma, p(".in.gamma.w"));
  if (use_viewdir) base = ad::add(base, ad::matmul(dirs, p(".in.dir.w")));

  std::vector<ad::Tensor> branches;
  branches.reserve(view_features.size());
  for (const ad::Tensor& feat : view_features) {
    NSRF_CHECK(feat.rank() == 2 && feat.dim(0) == n_points && feat.dim(1) == dims.feat_dim,
               "feature batch is {}, expected [{} x {}]", ad::shape_str(feat.shape()), n_points,
               dims.feat_dim);
    ad::Tensor h = ad::add(base, ad::matmul(feat, p(".in.feat.w")));
    h = ad::relu(ad::add_rowvec(h, p(".in.b")));
    for (int i = 1; i <= 3; ++i) h = resblock(h, params, prefix + ".trunk" + std::to_string(i));
    branches.push_back(std::move(h));
  }
  ad::Tensor pooled = ad::mean_pool_sorted(branches);

  ad::Tensor s = pooled;
  for (int i = 1; i <= 2; ++i) s = resblock(s, params, prefix + ".sem" + std::to_string(i));
  s = ad::softmax(ad::linear(s, p(".sem.out.w"), p(".sem.out.b")));

  ad::Tensor geo = pooled;
  for (int i = 1; i <= 2; ++i) geo = resblock(geo, params, prefix + ".geo" + std::to_string(i));
  geo = ad::linear(geo, p(".geo.out.w"), p(".geo.out.b"));

  FieldBatch out;
  out.color = ad::sigmoid(ad::slice_cols(geo, 0, 3));
  out.sigma = ad::softplus(ad::slice_cols(geo, 3, 4));
  out.semantics = s;
  return out;
}

FieldOutput field_eval(const Vec3& x, const Vec3& d,
                       const std::vector<std::vector<double>>& features,
                       const ParamGetter& params, const std::string& prefix,
                       const FieldDims& dims, int pe_octaves, bool use_viewdir) {
  std::vector<double> enc = positional_encoding(x, pe_octaves);
  NSRF_CHECK(static_cast<int>(enc.size()) == dims.gamma_dim,
             "encoding length {} does not match gamma_dim {}", enc.size(), dims.gamma_dim);
  ad::Tensor gamma({1, dims.gamma_dim}, std::move(enc));
  ad::Tensor dirs({1, 3}, {d.x(), d.y(), d.z()});
  std::vector<ad::Tensor> feats;
  feats.reserve(features.size());
  for (const std::vector<double>& f : features) {
    NSRF_CHECK(static_cast<int>(f.size()) == dims.feat_dim,
               "feature length {} does not match feat_dim {}", f.size(), dims.feat_dim);
    feats.emplace_back(ad::Shape{1, dims.feat_dim}, f);
  }
  FieldBatch batch = field_eval_batch(gamma, dirs, feats, params, prefix, dims, use_viewdir);

  FieldOutput out;
  out.color = {batch.color.at(0), batch.color.at(1), batch.color.at(2)};
  out.sigma = batch.sigma.at(0);
  out.semantics = batch.semantics.values();
  return out;
}

}  // namespace nsrf
