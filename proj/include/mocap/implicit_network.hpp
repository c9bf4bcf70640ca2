#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "mocap/errors.hpp"

namespace mocap {

/// Hidden layer widths of the trajectory network.
inline const std::vector<int> kHiddenWidths = {128, 256, 512, 1024, 2048};

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Time-conditioned MLP: each hidden layer is dense -> layer norm -> relu,
/// and every hidden layer after the first also sees the time encoding
/// concatenated to the previous activation. A final dense layer produces the
/// output vector.
///
/// All parameters live in one flat vector so optimizers and serialization
/// can treat them uniformly. Backpropagation is written out by hand for this
/// fixed operator set.
template <typename Scalar>
class ImplicitNetwork
{
public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  struct LayerSlots
  {
    int in = 0;
    int out = 0;
    std::size_t weight = 0;
    std::size_t bias = 0;
    std::size_t gain = 0;   // hidden layers only
    std::size_t offset = 0; // hidden layers only
  };

  /// Intermediate values kept by forward() for backward().
  struct Cache
  {
    std::vector<Mat> inputs;
    std::vector<Mat> normalized;
    std::vector<RowVec> inv_std;
    std::vector<Mat> activations; // post-relu
  };

  ImplicitNetwork() = default;

  ImplicitNetwork(int encoding_dim, int output_dim, std::vector<int> hidden = kHiddenWidths)
    : mEncodingDim(encoding_dim), mOutputDim(output_dim), mHidden(std::move(hidden))
  {
    std::size_t cursor = 0;
    int prev = 0;
    for (std::size_t i = 0; i < mHidden.size(); ++i)
    {
      LayerSlots s;
      s.in = (i == 0 ? 0 : prev) + mEncodingDim;
      s.out = mHidden[i];
      s.weight = cursor;
      cursor += static_cast<std::size_t>(s.in) * s.out;
      s.bias = cursor;
      cursor += s.out;
      s.gain = cursor;
      cursor += s.out;
      s.offset = cursor;
      cursor += s.out;
      mLayers.push_back(s);
      prev = s.out;
    }
    LayerSlots last;
    last.in = prev;
    last.out = mOutputDim;
    last.weight = cursor;
    cursor += static_cast<std::size_t>(last.in) * last.out;
    last.bias = cursor;
    cursor += last.out;
    mLayers.push_back(last);
    params = Vec::Zero(static_cast<Eigen::Index>(cursor));
  }

  Vec params;

  int encoding_dim() const { return mEncodingDim; }
  int output_dim() const { return mOutputDim; }
  const std::vector<int>& hidden() const { return mHidden; }
  const std::vector<LayerSlots>& layers() const { return mLayers; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params.size()); }

  /// Uniform fan-in initialization, unit gains, zero norm offsets. The output
  /// layer weights are scaled by `output_scale` and its bias set to
  /// `output_bias` when one is given.
  void initialize(std::uint64_t seed, double output_scale = 1.0, const Vec* output_bias = nullptr)
  {
    std::mt19937_64 rng(seed);
    for (std::size_t li = 0; li < mLayers.size(); ++li)
    {
      const LayerSlots& s = mLayers[li];
      const bool final_layer = li + 1 == mLayers.size();
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
      std::uniform_real_distribution<double> u(-bound, bound);
      const double scale = final_layer ? output_scale : 1.0;
      for (std::size_t k = 0; k < static_cast<std::size_t>(s.in) * s.out; ++k)
        params[static_cast<Eigen::Index>(s.weight + k)] = static_cast<Scalar>(scale * u(rng));
      for (int k = 0; k < s.out; ++k)
        params[static_cast<Eigen::Index>(s.bias + k)] = static_cast<Scalar>(scale * u(rng));
      if (!final_layer)
      {
        norm_gain(li).setOnes();
        norm_offset(li).setZero();
      }
    }
    if (output_bias)
      bias(mLayers.size() - 1) = *output_bias;
  }

  Eigen::Map<Mat> weight(std::size_t layer)
  {
    const auto& s = mLayers[layer];
    return Eigen::Map<Mat>(params.data() + s.weight, s.out, s.in);
  }
  Eigen::Map<const Mat> weight(std::size_t layer) const
  {
    const auto& s = mLayers[layer];
    return Eigen::Map<const Mat>(params.data() + s.weight, s.out, s.in);
  }
  Eigen::Map<Vec> bias(std::size_t layer)
  {
    const auto& s = mLayers[layer];
    return Eigen::Map<Vec>(params.data() + s.bias, s.out);
  }
  Eigen::Map<const Vec> bias(std::size_t layer) const
  {
    const auto& s = mLayers[layer];
    return Eigen::Map<const Vec>(params.data() + s.bias, s.out);
  }
  Eigen::Map<Vec> norm_gain(std::size_t layer)
  {
    const auto& s = mLayers[layer];
    return Eigen::Map<Vec>(params.data() + s.gain, s.out);
  }
  Eigen::Map<const Vec> norm_gain(std::size_t layer) const
  {
    const auto& s = mLayers[layer];
    return Eigen::Map<const Vec>(params.data() + s.gain, s.out);
  }
  Eigen::Map<Vec> norm_offset(std::size_t layer)
  {
    const auto& s = mLayers[layer];
    return Eigen::Map<Vec>(params.data() + s.offset, s.out);
  }
  Eigen::Map<const Vec> norm_offset(std::size_t layer) const
  {
    const auto& s = mLayers[layer];
    return Eigen::Map<const Vec>(params.data() + s.offset, s.out);
  }

  /// Evaluates a batch; `encoding` has one column per sample.
  Mat forward(const Mat& encoding, Cache* cache = nullptr) const
  {
    if (!params.allFinite())
      throw NonFiniteParameters("network parameters contain NaN or Inf");
    const Eigen::Index B = encoding.cols();
    const std::size_t nh = mHidden.size();
    if (cache)
    {
      cache->inputs.resize(nh + 1);
      cache->normalized.resize(nh);
      cache->inv_std.resize(nh);
      cache->activations.resize(nh);
    }
    Mat act;
    Mat input;
    for (std::size_t li = 0; li < nh; ++li)
    {
      const LayerSlots& s = mLayers[li];
      if (li == 0)
        input = encoding;
      else
      {
        input.resize(s.in, B);
        input.topRows(act.rows()) = act;
        input.bottomRows(mEncodingDim) = encoding;
      }
      Mat z = weight(li) * input;
      z.colwise() += bias(li);
      const RowVec mean = z.colwise().mean();
      z.rowwise() -= mean;
      RowVec inv_std = (z.colwise().squaredNorm() / static_cast<Scalar>(s.out)).array()
                           .unaryExpr([](Scalar v) {
                             return Scalar(1) / std::sqrt(v + Scalar(kLayerNormEpsilon));
                           });
      z = z * inv_std.asDiagonal();
      Mat y = norm_gain(li).asDiagonal() * z;
      y.colwise() += norm_offset(li);
      act = y.cwiseMax(Scalar(0));
      if (cache)
      {
        cache->inputs[li] = std::move(input);
        cache->normalized[li] = std::move(z);
        cache->inv_std[li] = std::move(inv_std);
        cache->activations[li] = act;
      }
    }
    const std::size_t lf = mLayers.size() - 1;
    Mat out = weight(lf) * act;
    out.colwise() += bias(lf);
    if (cache)
      cache->inputs[nh] = act;
    return out;
  }

  /// Gradient of sum(grad_output .* output) with respect to params.
  Vec backward(const Cache& cache, const Mat& grad_output) const
  {
    Vec grad = Vec::Zero(params.size());
    const std::size_t nh = mHidden.size();
    const std::size_t lf = mLayers.size() - 1;
    {
      const LayerSlots& s = mLayers[lf];
      Eigen::Map<Mat>(grad.data() + s.weight, s.out, s.in).noalias()
          = grad_output * cache.inputs[nh].transpose();
      Eigen::Map<Vec>(grad.data() + s.bias, s.out) = grad_output.rowwise().sum();
    }
    Mat d_act = weight(lf).transpose() * grad_output;
    for (std::size_t li = nh; li-- > 0;)
    {
      const LayerSlots& s = mLayers[li];
      const Mat& zhat = cache.normalized[li];
      // relu: pass gradient where the activation is positive
      Mat dy = (cache.activations[li].array() > Scalar(0)).select(d_act, Scalar(0));
      Eigen::Map<Vec>(grad.data() + s.gain, s.out) = dy.cwiseProduct(zhat).rowwise().sum();
      Eigen::Map<Vec>(grad.data() + s.offset, s.out) = dy.rowwise().sum();
      Mat dzhat = norm_gain(li).asDiagonal() * dy;
      const RowVec mean_d = dzhat.colwise().mean();
      const RowVec mean_dz = dzhat.cwiseProduct(zhat).colwise().mean();
      Mat dz = dzhat;
      dz.rowwise() -= mean_d;
      dz -= zhat * mean_dz.asDiagonal();
      dz = dz * cache.inv_std[li].asDiagonal();
      Eigen::Map<Mat>(grad.data() + s.weight, s.out, s.in).noalias()
          = dz * cache.inputs[li].transpose();
      Eigen::Map<Vec>(grad.data() + s.bias, s.out) = dz.rowwise().sum();
      if (li > 0)
      {
        const int prev = mHidden[li - 1];
        d_act.noalias() = weight(li).topRows(s.out).leftCols(prev).transpose() * dz;
      }
    }
    return grad;
  }

private:
  int mEncodingDim = 0;
  int mOutputDim = 0;
  std::vector<int> mHidden;
  std::vector<LayerSlots> mLayers;
};

} // namespace mocap
