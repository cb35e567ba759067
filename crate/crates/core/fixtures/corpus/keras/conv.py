import tensorflow as tf
from tensorflow.keras import layers


class ConvNet(tf.keras.Model):
    def __init__(self):
        super().__init__()
        self.conv1 = layers.Conv2D(32, 3, padding="same", activation="relu")
        self.bn = layers.BatchNormalization()
        self.pool = layers.MaxPool2D(pool_size=2)
        self.flat = layers.Flatten()
        self.fc = layers.Dense(10)

    def call(self, x):
        return self.fc(self.flat(self.pool(self.bn(self.conv1(x)))))


class Classifier(layers.Layer):
    def __init__(self, n):
        super().__init__()
        self.emb = layers.Embedding(20000, 128)
        self.rnn = layers.LSTM(128)
        self.out = layers.Dense(n)

    def call(self, x):
        return self.out(self.rnn(self.emb(x)))
