#include "dkd/losscheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dkd/distill.hpp"
#include "dkd/model.hpp"
#include "dkd/numkernel.hpp"
#include "dkd/rng.hpp"
#include "dkd/selector.hpp"

namespace dkd {

void LossCheckOptions::validate() const {
  if (n < 2) throw InvalidArgument("losscheck: n must be at least 2");
  if (c < 2) throw InvalidArgument("losscheck: c must be at least 2");
  if (trials < 1) throw InvalidArgument("losscheck: trials must be at least 1");
}

bool LossCheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string LossCheckReport::text() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "losscheck n=%zu c=%zu trials=%zu seed=%llu\n", options.n,
                options.c, options.trials, static_cast<unsigned long long>(options.seed));
  std::string out = buf;
  for (const CheckResult& c : checks) {
    std::snprintf(buf, sizeof buf, "%-4s %-28s worst=%.3e tol=%.1e", c.passed ? "PASS" : "FAIL",
                  c.name.c_str(), c.worst, c.tol);
    out += buf;
    if (!c.detail.empty()) out += "  " + c.detail;
    out += '\n';
  }
  out += passed() ? "all checks passed\n" : "some checks FAILED\n";
  return out;
}

namespace {

// Straight-loop references, written without the vectorized helpers.
double ref_kl(std::span<const double> s, std::span<const double> t) {
  double ms = s[0], mt = t[0];
  for (std::size_t k = 1; k < s.size(); ++k) {
    ms = std::max(ms, s[k]);
    mt = std::max(mt, t[k]);
  }
  double zs = 0.0, zt = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    zs += std::exp(s[k] - ms);
    zt += std::exp(t[k] - mt);
  }
  double kl = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double lt = t[k] - mt - std::log(zt), ls = s[k] - ms - std::log(zs);
    kl += std::exp(lt) * (lt - ls);
  }
  return kl;
}

double ref_ikd(const Matrix& s, const Matrix& t) {
  double sum = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) sum += ref_kl(s.row(i), t.row(i));
  return sum / static_cast<double>(s.rows());
}

double ref_relation_entry(const Matrix& z, std::size_t i, std::size_t j, RkdVariant v) {
  double dot = 0.0, ni = 0.0, nj = 0.0, d2 = 0.0;
  for (std::size_t k = 0; k < z.cols(); ++k) {
    dot += z(i, k) * z(j, k);
    ni += z(i, k) * z(i, k);
    nj += z(j, k) * z(j, k);
    d2 += (z(i, k) - z(j, k)) * (z(i, k) - z(j, k));
  }
  switch (v) {
    case RkdVariant::inner: return dot;
    case RkdVariant::euclid: return -std::sqrt(d2);
    case RkdVariant::cosine:
      if (i == j) return 1.0;
      return (ni == 0.0 || nj == 0.0) ? 0.0 : dot / std::sqrt(ni * nj);
  }
  return 0.0;
}

double ref_rkd(const Matrix& s, const Matrix& t, RkdVariant v) {
  const std::size_t n = s.rows();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Vec rs(n), rt(n);
    for (std::size_t j = 0; j < n; ++j) {
      rs[j] = ref_relation_entry(s, i, j, v);
      rt[j] = ref_relation_entry(t, i, j, v);
    }
    sum += ref_kl(rs, rt);
  }
  return sum / static_cast<double>(n);
}

double ref_dkd(const Matrix& s, const Matrix& t) {
  const std::size_t n = s.rows(), c = s.cols();
  double outer = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      Vec ds(c), dt(c);
      for (std::size_t k = 0; k < c; ++k) {
        ds[k] = s(i, k) - s(j, k);
        dt[k] = t(i, k) - t(j, k);
      }
      inner += ref_kl(ds, dt);
    }
    outer += inner / static_cast<double>(n - 1);
  }
  return outer / static_cast<double>(n);
}

Matrix random_batch(Rng& rng, std::size_t n, std::size_t c, double scale = 1.0) {
  Matrix m(n, c);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

Vec random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

double matrix_fd_error(const std::function<double(const Matrix&)>& f, const Matrix& at,
                       const Matrix& analytic) {
  const ScalarFn flat = [&](std::span<const double> x) {
    Matrix m(at.rows(), at.cols());
    std::copy(x.begin(), x.end(), m.data().begin());
    return f(m);
  };
  const Vec fd = finite_diff_grad(flat, at.data());
  return relative_error(analytic.data(), fd);
}

struct Tracker {
  CheckResult r;
  Tracker(std::string name, double tol) {
    r.name = std::move(name);
    r.tol = tol;
    r.passed = true;
  }
  void error(double e) {
    r.worst = std::max(r.worst, e);
    if (!(e < r.tol)) r.passed = false;
  }
};

void gradient_checks(const LossCheckOptions& o, std::vector<CheckResult>& out) {
  Rng rng(derive_seed(o.seed, 11));
  constexpr double kTol = 1e-5;

  Tracker kd("grad kd_divergence", kTol);
  for (std::size_t t = 0; t < o.trials; ++t) {
    const std::size_t c = draw(rng, 2, std::max<std::size_t>(o.c, 2));
    const Vec s = random_vec(rng, c), te = random_vec(rng, c);
    const Vec fd = finite_diff_grad([&](std::span<const double> x) { return kd_divergence(x, te); }, s);
    kd.error(relative_error(kd_gradient(s, te), fd));
  }
  out.push_back(kd.r);

  Tracker ikd("grad ikd", kTol), dkd("grad dkd", kTol);
  Tracker rkd_i("grad rkd inner", kTol), rkd_e("grad rkd euclid", kTol), rkd_c("grad rkd cosine", kTol);
  for (std::size_t t = 0; t < o.trials; ++t) {
    // Rows of expected unit norm keep the relation softmax unsaturated.
    const std::size_t n = draw(rng, 2, o.n), c = draw(rng, 2, o.c);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    const Matrix s = random_batch(rng, n, c, scale), te = random_batch(rng, n, c, scale);
    ikd.error(matrix_fd_error([&](const Matrix& m) { return ikd_loss(m, te); }, s, ikd_grad(s, te)));
    dkd.error(matrix_fd_error([&](const Matrix& m) { return dkd_loss(m, te); }, s, dkd_grad(s, te)));
    for (auto [v, tr] : {std::pair{RkdVariant::inner, &rkd_i}, std::pair{RkdVariant::euclid, &rkd_e},
                         std::pair{RkdVariant::cosine, &rkd_c}})
      tr->error(matrix_fd_error([&, v = v](const Matrix& m) { return rkd_loss(m, te, v); }, s,
                                rkd_grad(s, te, v)));
  }
  for (Tracker* tr : {&ikd, &rkd_i, &rkd_e, &rkd_c, &dkd}) out.push_back(tr->r);

  // Instances where a hinge argument sits within 1e-3 of zero are redrawn.
  Tracker trip("grad triplet (anchor)", kTol);
  for (std::size_t t = 0; t < o.trials;) {
    const std::size_t d = draw(rng, 2, o.c);
    const Vec a = random_vec(rng, d);
    std::vector<Vec> pos, neg;
    for (std::size_t k = draw(rng, 1, 3); k > 0; --k) pos.push_back(random_vec(rng, d));
    for (std::size_t k = draw(rng, 1, 3); k > 0; --k) neg.push_back(random_vec(rng, d));
    const double margin = rng.uniform(0.5, 2.0);
    bool near_kink = false;
    for (const Vec& p : pos)
      for (const Vec& q : neg) {
        double dp = 0.0, dn = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          dp += (a[k] - p[k]) * (a[k] - p[k]);
          dn += (a[k] - q[k]) * (a[k] - q[k]);
        }
        near_kink |= std::abs(std::sqrt(dp) - std::sqrt(dn) + margin) < 1e-3;
      }
    if (near_kink) continue;
    const Vec fd = finite_diff_grad(
        [&](std::span<const double> x) { return triplet_loss(x, pos, neg, margin); }, a);
    const Vec an = triplet_loss_grad(a, pos, neg, margin).anchor;
    // A fully inactive hinge has a zero gradient on both sides.
    trip.error(relative_error(an, fd));
    ++t;
  }
  out.push_back(trip.r);

  Tracker bce("grad binary ce (head)", kTol), lg("grad selector L_g (head)", 1e-4);
  for (std::size_t t = 0; t < o.trials; ++t) {
    const std::size_t din = draw(rng, 2, 4), dout = draw(rng, 2, 4);
    SelectorState st;
    const std::size_t dims[] = {din, dout};
    st.head = Mlp::random(dims, rng);
    st.proto_novel = random_vec(rng, dout);
    st.proto_base = random_vec(rng, dout);
    st.initialized = true;
    st.margin = 1.0;
    SelectorBatch b;
    const std::size_t n = draw(rng, 3, 6);
    for (std::size_t i = 0; i < n; ++i) {
      b.inputs.push_back(random_vec(rng, din));
      b.is_base.push_back(i % 2 == 0 ? 1 : 0);
    }
    for (auto [w, tr] : {std::pair{SelectorWeights{0.0, 1.0}, &bce}, std::pair{SelectorWeights{0.2, 0.8}, &lg}}) {
      const Vec an = selector_loss(st, b, w).grad;
      const Vec fd = finite_diff_grad(
          [&, w = w](std::span<const double> p) {
            SelectorState s2 = st;
            s2.head.set_trainable_parameters(p);
            return selector_loss(s2, b, w).loss.total;
          },
          st.head.trainable_parameters());
      tr->error(relative_error(an, fd));
    }
  }
  out.push_back(bce.r);
  out.push_back(lg.r);

  Tracker lf("grad L_f end-to-end", 1e-4);
  for (std::size_t t = 0; t < o.trials; ++t) {
    const std::size_t din = draw(rng, 2, 5), hid = draw(rng, 2, 6), d = draw(rng, 2, 4);
    const std::size_t dims[] = {din, hid, d};
    const Mlp m = Mlp::random(dims, rng);
    const std::size_t classes = draw(rng, 3, 5);
    PrototypeBank bank(d);
    for (std::size_t k = 0; k < classes; ++k) bank.set(static_cast<int>(k), random_vec(rng, d));
    StepInput in;
    in.preorder_loss = static_cast<PreorderLoss>(t % 3);
    in.rkd_variant = static_cast<RkdVariant>((t / 3) % 3);
    const std::size_t n = draw(rng, 4, 6);
    for (std::size_t i = 0; i < n; ++i) {
      in.inputs.push_back(random_vec(rng, din));
      in.targets.push_back(static_cast<std::size_t>(rng.below(classes)));
    }
    in.base.members = {0, 1};
    in.base.columns = {0, 1};
    in.base.teacher = random_batch(rng, 2, 2);
    in.preorder.members = {2, 3};
    in.preorder.columns = {0, 1, 2};
    in.preorder.teacher = random_batch(rng, 2, 3);
    const LossWeights w{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
    const Vec an = feature_loss(m, bank, in, w).grad;
    const Vec fd = finite_diff_grad(
        [&](std::span<const double> p) {
          Mlp m2 = m;
          m2.set_trainable_parameters(p);
          return feature_loss(m2, bank, in, w).loss.total;
        },
        m.trainable_parameters());
    lf.error(relative_error(an, fd));
  }
  out.push_back(lf.r);
}

void oracle_checks(const LossCheckOptions& o, std::vector<CheckResult>& out) {
  Rng rng(derive_seed(o.seed, 12));
  Tracker ikd("oracle ikd", 1e-12), rkd("oracle rkd (3 variants)", 1e-12), dkd("oracle dkd", 1e-12);
  for (std::size_t n = 2; n <= o.n; ++n)
    for (std::size_t c = 2; c <= o.c; ++c) {
      const Matrix s = random_batch(rng, n, c), t = random_batch(rng, n, c);
      ikd.error(std::abs(ikd_loss(s, t) - ref_ikd(s, t)));
      for (RkdVariant v : {RkdVariant::inner, RkdVariant::euclid, RkdVariant::cosine})
        rkd.error(std::abs(rkd_loss(s, t, v) - ref_rkd(s, t, v)));
      dkd.error(std::abs(dkd_loss(s, t) - ref_dkd(s, t)));
    }
  out.push_back(ikd.r);
  out.push_back(rkd.r);
  out.push_back(dkd.r);
}

void invariance_checks(const LossCheckOptions& o, std::vector<CheckResult>& out) {
  Rng rng(derive_seed(o.seed, 13));
  Tracker dkd("dkd shift invariance", 1e-12);
  CheckResult ikd{"ikd shift sensitivity", true, 1e300, 1e-3, ""};
  for (std::size_t t = 0; t < o.trials; ++t) {
    const std::size_t n = draw(rng, 2, o.n), c = draw(rng, 2, o.c);
    const Matrix s = random_batch(rng, n, c), te = random_batch(rng, n, c);
    const Vec shift = random_vec(rng, c, 2.0);
    Matrix s2 = s, t2 = te;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        s2(i, k) += shift[k];
        t2(i, k) += shift[k];
      }
    const double base = dkd_loss(s, te);
    dkd.error(std::max(std::abs(dkd_loss(s2, te) - base), std::abs(dkd_loss(s, t2) - base)));
    const double change = std::abs(ikd_loss(s2, te) - ikd_loss(s, te));
    ikd.worst = std::min(ikd.worst, change);
    if (!(change > ikd.tol)) ikd.passed = false;
  }
  ikd.detail = "smallest change; must exceed tol";
  out.push_back(dkd.r);
  out.push_back(ikd);
}

// Rows x1, x1 + s_k versus x1, x1 - s_k, scored against one teacher.
void mirror_checks(const LossCheckOptions& o, std::vector<CheckResult>& out) {
  Rng rng(derive_seed(o.seed, 14));
  Tracker rkd("mirror rkd euclid equal", 1e-12);
  CheckResult dkd{"mirror dkd separates", true, 1e300, 1e-3, "smallest gap; must exceed tol"};
  constexpr std::size_t kInstances = 20;
  for (std::size_t t = 0; t < kInstances; ++t) {
    const std::size_t c = draw(rng, 2, o.c), k = draw(rng, 2, std::max<std::size_t>(o.n, 3) - 1);
    const Vec center = random_vec(rng, c);
    Matrix a(k + 1, c), b(k + 1, c);
    for (std::size_t j = 0; j < c; ++j) a(0, j) = b(0, j) = center[j];
    for (std::size_t r = 1; r <= k; ++r) {
      const Vec off = random_vec(rng, c);
      for (std::size_t j = 0; j < c; ++j) {
        a(r, j) = center[j] + off[j];
        b(r, j) = center[j] - off[j];
      }
    }
    const Matrix teacher = random_batch(rng, k + 1, c);
    rkd.error(std::abs(rkd_loss(a, teacher, RkdVariant::euclid) - rkd_loss(b, teacher, RkdVariant::euclid)));
    const double gap = std::abs(dkd_loss(a, teacher) - dkd_loss(b, teacher));
    dkd.worst = std::min(dkd.worst, gap);
    if (!(gap > dkd.tol)) dkd.passed = false;
  }
  out.push_back(rkd.r);
  out.push_back(dkd);
}

void pollution_checks(const LossCheckOptions& o, std::vector<CheckResult>& out) {
  CheckResult r{"pollution counts N=2..10", true, 0.0, 0.0, ""};
  for (std::size_t n = 2; n <= 10; ++n)
    for (std::size_t idx = 0; idx < n; ++idx) {
      const PollutionReport p = pollution_report(n, idx, derive_seed(o.seed, n * 16 + idx));
      const bool ok = p.consistent() && p.dkd_affected == 2 * (n - 1) && p.dkd_total == n * (n - 1) &&
                      p.rkd_affected_rows == n && p.rkd_total_rows == n;
      if (!ok) {
        r.passed = false;
        r.worst += 1.0;
        if (r.detail.empty())
          r.detail = "first mismatch at N=" + std::to_string(n) + " idx=" + std::to_string(idx);
      }
    }
  if (r.passed) r.detail = "static == observed";
  out.push_back(r);
}

}  // namespace

LossCheckReport run_losscheck(const LossCheckOptions& options) {
  options.validate();
  LossCheckReport rep;
  rep.options = options;
  gradient_checks(options, rep.checks);
  oracle_checks(options, rep.checks);
  invariance_checks(options, rep.checks);
  mirror_checks(options, rep.checks);
  pollution_checks(options, rep.checks);
  return rep;
}

}  // namespace dkd
